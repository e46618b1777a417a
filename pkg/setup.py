from setuptools import find_packages, setup

setup(
    name="omtps",
    version="0.1.0",
    description="Transition path sampling by Onsager-Machlup action minimization",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    license="MIT",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Chemistry",
        "Topic :: Scientific/Engineering :: Physics",
        "Programming Language :: Python :: 3.8",
    ],
    keywords="transition path sampling onsager-machlup diffusion flow-matching committor msm",
    packages=find_packages(include=["omtps*"]),
    install_requires=[
        "numpy<2.0.0",
        "pandas<2.0.0",
        "scipy>=1.8",
        "torch>=1.13",
        "tqdm",
    ],
    extras_require={"viz": ["matplotlib"]},
    tests_require=["pytest"],
    entry_points={"console_scripts": ["omtps=omtps.cli:main"]},
)
