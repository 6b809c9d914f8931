"""
This module contains the byte level readers and writers of all evpriv file formats and should not be used directly
from the outside world. The domain modules wrap these functions and hand out typed objects.
"""
import logging

_logger = logging.getLogger(__name__)
