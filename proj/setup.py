import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    """Drive the project's CMake build and install the extension into the wheel."""

    def build_extension(self, ext):
        import pybind11

        ext_path = Path(self.get_ext_fullpath(ext.name)).resolve()
        prefix = ext_path.parent.parent  # .../build_lib, extension lands in <prefix>/hpt/
        source_dir = Path(__file__).resolve().parent
        build_dir = Path(self.build_temp).resolve() / "cmake"
        build_dir.mkdir(parents=True, exist_ok=True)

        cfg = "Debug" if self.debug else "Release"
        configure = [
            "cmake",
            "-S", str(source_dir),
            "-B", str(build_dir),
            f"-DCMAKE_BUILD_TYPE={cfg}",
            "-DSKBUILD=ON",  # wheel layout: extras off, install rules on
            f"-DPython3_EXECUTABLE={sys.executable}",
            f"-Dpybind11_DIR={pybind11.get_cmake_dir()}",
        ]
        subprocess.run(configure, check=True)
        subprocess.run(["cmake", "--build", str(build_dir), "--target", "_core"], check=True)
        subprocess.run(["cmake", "--install", str(build_dir), "--prefix", str(prefix)], check=True)


setup(
    packages=["hpt"],
    package_dir={"hpt": "python/hpt"},
    ext_modules=[CMakeExtension("hpt._core")],
    cmdclass={"build_ext": CMakeBuild},
    zip_safe=False,
)
