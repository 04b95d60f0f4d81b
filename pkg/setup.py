from setuptools import setup
import os

here = os.path.abspath( os.path.dirname( __file__ ))

__version__			= None
__version_info__		= None
exec( open( os.path.join( here, 'version.py' ), 'r' ).read() )


install_requires		= open( os.path.join( here, "requirements.txt" )).readlines()

setup(
    name			= "fedsparse",
    version			= __version__,
    tests_require		= [ "pytest" ],
    install_requires		= install_requires,
    packages			= [
        "fedsparse",
    ],
    package_dir			= {
        "fedsparse":		".",
    },
    include_package_data	= True,
    entry_points		= {
        "console_scripts": [
            "fedsparse = fedsparse.harness:main",
        ],
    },
    author			= "Fedsparse developers",
    description			= "Fedsparse implements heterogeneous federated learning for sparse time-series prediction",
    long_description		= """\
Purpose: to let users holding differently distributed, irregularly sampled multivariate time
series improve each other's predictions without sharing data.  Each user's model has a small
head network per feature; heads are published to a shared pool, and a user whose validation loss
has stopped improving blends in the pool heads that best predict its own recent samples.
""",
    license			= "GPLv3 (or later)",
    keywords			= "federated learning sparse time series neural network",
    classifiers			= [
        "License :: OSI Approved :: GNU General Public License v3 or later (GPLv3+)",
        "Programming Language :: Python :: 3",
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Environment :: Console",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
)
