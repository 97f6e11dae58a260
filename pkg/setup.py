import setuptools

with open("./sobolev_descent/README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name="sobolev_descent",
    version="0.1.0",
    description="Particle transport by regularized kernel and neural Sobolev descent",
    data_files=[('', [
                      "sobolev_descent/scripts/examples/config_gauss1d.yml",
                      "sobolev_descent/scripts/examples/config_color.yml",
                      "sobolev_descent/scripts/examples/config_morph.yml",
                      "sobolev_descent/scripts/examples/config_morph_neural.yml",
                      ])],
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: GNU General Public License v3 (GPLv3)",
        "Operating System :: OS Independent",
    ],
    scripts=[
        "sobolev_descent/scripts/workflow_cli.sh",
    ],
    entry_points={
        "console_scripts": [
            "sobolev-descent=sobolev_descent.cli:main",
        ],
    },
    keywords=["Sobolev descent", "optimal transport", "random features", "MMD"],
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["tests"]),
    include_package_data=True,
    python_requires='>=3.8',
    install_requires=[
        "numpy",
        "scipy",
        "pandas",
        "PyYAML",
        "Pillow",
        "tqdm",
    ],
    extras_require={
        "tests": [
            "pytest",
            "hypothesis",
        ],
    },
)
