"""
Implements tests for the misc module.
"""

from __future__ import absolute_import
from __future__ import print_function
from __future__ import division

__author__                      = "Fedsparse developers"
__copyright__                   = "Copyright (c) 2026 Fedsparse developers"
__license__                     = "GNU General Public License, Version 3 (or later)"

import numpy
import pytest

from .misc import *


def test_near():
    assert near( 1.0, 1.00001 )
    assert not near( 1.0, 1.001 )
    assert near( 0.0, 0.0 )
    assert near( 100., 100.9, significance=1.0e-2 )


def test_finite():
    assert finite( 1.0, numpy.zeros( 3 ))
    assert not finite( 1.0, numpy.array( [ 0.0, nan ] ))
    assert not finite( inf )


def test_exceptions():
    # Each is catchable as the built-in family it belongs to
    with pytest.raises( ValueError ):
        raise history_error( "insufficient history" )
    with pytest.raises( ArithmeticError ):
        raise diverged( "non-finite gradient" )
    with pytest.raises( LookupError ):
        raise empty_pool( "empty pool" )
    with pytest.raises( IOError ):
        raise pool_error( "unreachable" )


def test_digest():
    a                           = numpy.arange( 6, dtype=numpy.float64 ).reshape( 2, 3 )
    assert digest( a ) == digest( a.copy() )
    assert digest( a ) != digest( a.reshape( 3, 2 ))        # shape matters
    assert digest( a ) == digest( a.astype( numpy.float32 ))
    assert digest( b'abc', a ) != digest( b'abd', a )
    assert len( digest() ) == 64


def test_generator():
    assert numpy.array_equal( generator( 1, 2, 3 ).normal( size=5 ), generator( 1, 2, 3 ).normal( size=5 ))
    assert not numpy.array_equal( generator( 1, 2, 3 ).normal( size=5 ), generator( 1, 2, 4 ).normal( size=5 ))
    assert not numpy.array_equal( generator( 1 ).normal( size=5 ), generator( 2 ).normal( size=5 ))
    assert derive( 0, 1 ) == derive( 0, 1 )
    assert 0 <= derive( 7, 3, 2 ) < 2**31
