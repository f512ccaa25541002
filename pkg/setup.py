import sys

from cx_Freeze import Executable, setup

# cx_Freeze walks the scipy/numpy import graph recursively
sys.setrecursionlimit(10000)

build_exe_options = {
    "build_exe": "dist",
    "excludes": [
        "tkinter", "unittest", "hypothesis",
        # optional scipy array backends present in the build env, never imported
        "tensorflow", "torch", "jax", "cupy", "dask", "keras", "pandas",
    ],
    "packages": ["numpy", "scipy", "yaml", "PIL"],
    "optimize": "2",
}

with open("version.txt", "r", encoding="utf-8") as f:
    VERSION = f.read().strip()

setup(
    name="symlio",
    version=VERSION,
    description="Equivariant LiDAR-inertial odometry toolkit",
    options={"build_exe": build_exe_options},
    executables=[Executable("symlio.py", base="console")],
)
