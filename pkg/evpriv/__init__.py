from evpriv.events import *
from evpriv.exceptions import *
from evpriv.localization import (GlobalDescriptor, Intrinsics, MatchNoise, Pose, Query, RansacConfig, SceneMap,
                                 accuracy_report, build_synthetic_scene, global_descriptor, localize_queries,
                                 match_and_lift, pnp_ransac, pose_errors, retrieve_topk)
from evpriv.privacy_sensor import (BlendMask, FilterParams, accumulation_mask, blend, max_reflection_filter,
                                   median_filter_temporal, protect)
from evpriv.quality_metrics import MetricConfig, compare, mae, psnr, ssim
from evpriv.recon_net import (ConvNetParams, NoiseWatermark, TrainConfig, forward, forward_split, init_params,
                              make_watermark, sobel_sharpness, train_private)
from evpriv.synth import SceneSpec, render_frame, simulate_events, simulate_frames
from evpriv.version import *
