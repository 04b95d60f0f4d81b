#!/usr/bin/env python

"""
Miscellaneous functionality used by various other modules.
"""

# This file is part of Fedsparse
#
# Fedsparse is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# Fedsparse is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with Fedsparse.  If not, see <http://www.gnu.org/licenses/>.

from __future__ import absolute_import
from __future__ import print_function
from __future__ import division

__author__                      = "Fedsparse developers"
__copyright__                   = "Copyright (c) 2026 Fedsparse developers"
__license__                     = "GNU General Public License, Version 3 (or later)"

import hashlib
import math
import time

import numpy

#
# misc.timer
#
#     Wall-clock time for pool entry timestamps and run durations.
#
timer                           = time.time

nan                             = math.nan
inf                             = math.inf


#
# Exceptions.  Each derives from the built-in exception that best describes it, so callers that
# don't care about the distinction may simply catch ValueError, IOError, etc.
#
class history_error( ValueError ):
    """A label observation lacks the required w prior observations; "insufficient history"."""

class collision_error( ValueError ):
    """Two observations of one patient share a timestamp; "timestamp collision"."""

class format_error( ValueError ):
    """Malformed CSV row, binary blob or configuration."""

class patients_error( ValueError ):
    """Too few patients to split into train/valid/test partitions."""

class diverged( ArithmeticError ):
    """Training produced a non-finite loss or gradient."""

class incompatible( ValueError ):
    """Two networks that must share a shape do not."""

class empty_pool( LookupError ):
    """No source heads are available for selection."""

class pool_error( IOError ):
    """Transport failure talking to a model pool; always retriable."""

class protocol_error( ValueError ):
    """A malformed or oversized frame arrived on the pool wire protocol."""


#
# near          -- True iff the specified values are within 'significance' of each-other
#
def near( a, b, significance = 1.0e-4 ):
    """ Returns True iff the difference between the values is within the factor 'significance' of
    one of the original values.  Default is to within 4 decimal places. """
    return abs( a - b ) <= significance * max( abs( a ), abs( b ))


def finite( *arrays ):
    """True iff every entry of every supplied scalar or array is finite."""
    return all( numpy.all( numpy.isfinite( a )) for a in arrays )


#
# digest        -- A stable hex checksum of a sequence of arrays (and/or bytes)
#
#     Used to prove that two runs started from byte-identical weights and consumed byte-identical
# data; arrays are hashed in little-endian float64/int64 form, so the result does not depend on the
# platform byte order.
#
def digest( *items ):
    h                           = hashlib.sha256()
    for item in items:
        if isinstance( item, bytes ):
            h.update( item )
            continue
        a                       = numpy.asarray( item )
        if a.dtype.kind == 'f':
            a                   = a.astype( '<f8' )
        elif a.dtype.kind in 'iub':
            a                   = a.astype( '<i8' )
        h.update( str( a.shape ).encode( 'ascii' ))
        h.update( numpy.ascontiguousarray( a ).tobytes() )
    return h.hexdigest()


def generator( seed, *path ):
    """
    A numpy Generator, deterministically derived from an integer seed and an optional "path" of
    further integers (eg. repeat, task and user numbers), so that independent streams of randomness
    (initial weights, patient splits, random pool selection) never perturb each-other.
    """
    return numpy.random.default_rng( numpy.random.SeedSequence( [ int( seed ) ] + [ int( p ) for p in path ] ))


def derive( seed, *path ):
    """An integer seed derived from seed and path, for APIs taking a plain integer seed."""
    return int( generator( seed, *path ).integers( 2**31 ))
