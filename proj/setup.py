import glob

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

ext = Pybind11Extension(
    "nerfmd._core",
    sorted(glob.glob("src/*.cpp")) + ["python/module.cpp"],
    include_dirs=["include", "vendor", "/usr/include/eigen3"],
    libraries=["png"],
    cxx_std=20,
    extra_compile_args=["-O2", "-fno-math-errno"],
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
