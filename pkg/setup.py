from setuptools import setup

with open("requirements.txt") as f:
    requirements = f.read().splitlines()


setup(
    name="uav-mec-sim",
    version="0.1",
    description="Simulate task offloading and UAV trajectory control in "
    "UAV assisted mobile edge computing",
    license="Apache License 2.0",
    packages=["uavmec"],
    zip_safe=False,
    install_requires=requirements,
    entry_points={
        "console_scripts": ["uavmec=uavmec.main:main"],
    },
)
