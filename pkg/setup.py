import setuptools

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    install_requires = [line.strip() for line in fh if line.strip()]

setuptools.setup(
    name="langevinmix",
    version="0.1.0",
    author="Matthew Wimberly",
    author_email="matthew.wimb@gmail.com",
    description="Fixed-step SGLD with dependent data streams: constants, oracles and limit-theorem checks.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    url="https://github.com/mattdood/langevinmix",
    project_urls={
        "Bug Tracker": "https://github.com/mattdood/langevinmix/issues",
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    package_dir={"": "src"},
    packages=setuptools.find_packages(where="src"),
    package_data={"langevinmix": ["sql/*.sql"],},
    install_requires=install_requires,
    entry_points={
        "console_scripts": ["langevinmix=langevinmix.cli:main"],
    },
    python_requires=">=3.9",
)
