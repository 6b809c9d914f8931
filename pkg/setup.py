from setuptools import find_packages, setup

with open("README.md", "r") as fh:
    long_description = fh.read()

tests_require = ['pytest', 'mypy', 'pycodestyle', 'data-science-types']

extras_require = {
    'test': tests_require,
    'doc': ['sphinx', 'sphinx_rtd_theme'],

}

packages = find_packages(exclude=['tests'])


setup(
    name="evpriv",
    version="0.1.0",
    description="evpriv - privacy preserving event camera localization",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=packages,
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3 :: Only",
        "Topic :: Scientific/Engineering :: Image Recognition",
        "Topic :: Security",
    ],
    python_requires='>=3.7',
    extras_require=extras_require,
    install_requires=["numpy", "pandas", "scipy", "Pillow"],
    entry_points={
        'console_scripts': ['evpriv=evpriv.cli:main'],
    },
    tests_require=tests_require,
    test_suite="tests",
)
