#!/usr/bin/env python

from setuptools import setup, find_packages

setup(
    name='latentloco',
    version='0.1',

    license='MIT',
    description=('retargeting-free, latent-driven locomotion: motion '
                 'generator, MoE teacher and diffusion student in a planar '
                 'simulator.'),
    long_description=open('README.rst').read(),

    install_requires=[
        'docopt',
        'ply>=3.4',
        'numpy>=1.22',
        'scipy>=1.8',
        'torch>=2.0',
    ],

    packages=find_packages(exclude=['tests', 'tests.*']),
    package_data={
        'latentloco': ['data/*.robot', 'data/*.cfg'],
    },
    entry_points={
        'console_scripts': [
            'latentloco = latentloco.interface:main',
        ],
    },
    test_suite='tests.load_tests',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Programming Language :: Python :: 3',
        'Operating System :: OS Independent',
        'License :: OSI Approved :: MIT License',
    ],
)
