#!/usr/bin/env python

"""
synth           -- Synthetic sparse multichannel time-series, in heterogeneous pairs of domains

    Each patient is driven by a latent AR(1) process z_t of latent_dim dimensions:

        z_t     = phi * z_t-1 + innovation_std * N(0,I)

    and every one of the nf+1 channels is an affine view of a fixed mixing of it, plus noise:

        x_c,t   = scale_c * ( A z_t )_c + offset_c + noise_std * N(0,1)

    At each (consecutive integer) timestamp, exactly one channel is revealed: cycling through the
channels (round_robin), or drawn uniformly (uniform_random).  Channel nf is the label channel
whenever the series is used as-is; any channel may take that role via sparse_ts.select_label.

    A heterogeneous pair shares the mixing A and the latent dynamics, but the source domain has 10x
the patients and per-channel scales/offsets of its own: the same physiology, measured with
different equipment.
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

import collections
import json
import logging
import math

import numpy

from . import misc
from . import sparse_ts

log                             = logging.getLogger( __package__ )

SCHEMES                         = ( 'round_robin', 'uniform_random' )
SOURCE_PATIENTS                 = 10                    # source/target patient ratio
SOURCE_SCALE                    = ( 1.5, 3.0 )          # source scale multiplier, uniform
SOURCE_OFFSET                   = ( -5.0, 5.0 )         # source offset shift, uniform


domain_spec = collections.namedtuple(
    'DomainSpec', [
        'nf',                   # features; the domain has nf+1 channels
        'n_patients',
        'events_per_patient',
        'latent_dim',
        'mixing_seed',          # seeds the ( nf+1 ) x latent_dim mixing matrix A
        'noise_std',
        'scheme',               # in SCHEMES
        'scale',                # nf+1 per-channel scales (None: all 1.0)
        'offset',               # nf+1 per-channel offsets (None: all 0.0)
        'phi',                  # latent AR(1) coefficient
        'innovation_std',       # None: sqrt( 1 - phi^2 ), for unit stationary variance
        'w',                    # the window size the domain must support
        'name',
        ] )
domain_spec.__new__.__defaults__ = ( 4, 20, 400, 2, 0, 0.1, 'round_robin', None, None, 0.9, None, 3, 'domain' )


def channels( spec ):
    return spec.nf + 1


def scales( spec ):
    return numpy.ones( channels( spec )) if spec.scale is None else numpy.asarray( spec.scale, dtype=numpy.float64 )


def offsets( spec ):
    return numpy.zeros( channels( spec )) if spec.offset is None else numpy.asarray( spec.offset, dtype=numpy.float64 )


def innovation( spec ):
    if spec.innovation_std is not None:
        return spec.innovation_std
    return math.sqrt( max( 0.0, 1.0 - spec.phi ** 2 ))


def validate( spec ):
    """Raises ValueError describing the first invalid field of spec."""
    if spec.nf < 2:
        raise ValueError( "%s: nf must be >= 2, not %r" % ( spec.name, spec.nf ))
    if spec.w < 1:
        raise ValueError( "%s: w must be >= 1, not %r" % ( spec.name, spec.w ))
    if spec.n_patients < 1:
        raise ValueError( "%s: n_patients must be >= 1, not %r" % ( spec.name, spec.n_patients ))
    if spec.events_per_patient < channels( spec ) * spec.w:
        raise ValueError( "%s: events_per_patient must be >= (nf+1)*w = %d, not %r" % (
            spec.name, channels( spec ) * spec.w, spec.events_per_patient ))
    if spec.latent_dim < 1:
        raise ValueError( "%s: latent_dim must be >= 1, not %r" % ( spec.name, spec.latent_dim ))
    if not spec.noise_std >= 0:
        raise ValueError( "%s: noise_std must be >= 0, not %r" % ( spec.name, spec.noise_std ))
    if spec.scheme not in SCHEMES:
        raise ValueError( "%s: unknown channel scheme %r; expected one of %s" % (
            spec.name, spec.scheme, ", ".join( SCHEMES )))
    if not -1 <= spec.phi <= 1:
        raise ValueError( "%s: phi must lie in [-1,1], not %r" % ( spec.name, spec.phi ))
    if spec.innovation_std is not None and not spec.innovation_std >= 0:
        raise ValueError( "%s: innovation_std must be >= 0, not %r" % ( spec.name, spec.innovation_std ))
    for what, values in ( ( 'scale', spec.scale ), ( 'offset', spec.offset )):
        if values is not None and numpy.shape( values ) != ( channels( spec ), ):
            raise ValueError( "%s: %s needs %d entries, not %r" % ( spec.name, what, channels( spec ), values ))
    if not misc.finite( scales( spec ), offsets( spec )) or numpy.any( scales( spec ) == 0 ):
        raise ValueError( "%s: scales must be finite and non-zero, offsets finite" % spec.name )
    return spec


def mixing( spec ):
    """The ( nf+1 ) x latent_dim mixing matrix, a function of mixing_seed (and shape) only."""
    rng                         = misc.generator( spec.mixing_seed )
    return rng.normal( size=( channels( spec ), spec.latent_dim )) / math.sqrt( spec.latent_dim )


def simulate( spec, rng, A, patient_id ):
    """
    One patient: returns ( series, latent ), where latent is the events_per_patient x latent_dim
    path driving it.  The initial latent state is standard normal.
    """
    n, c                        = spec.events_per_patient, channels( spec )
    latent                      = numpy.empty( ( n, spec.latent_dim ))
    latent[0]                   = rng.normal( size=spec.latent_dim )
    shocks                      = innovation( spec ) * rng.normal( size=( n, spec.latent_dim ))
    for t in range( 1, n ):
        latent[t]               = spec.phi * latent[t-1] + shocks[t]
    if spec.scheme == 'round_robin':
        revealed                = numpy.arange( n ) % c
    else:
        revealed                = rng.integers( c, size=n )
    noise                       = spec.noise_std * rng.normal( size=n )
    mixed                       = numpy.sum( A[revealed] * latent, axis=1 )
    values                      = scales( spec )[revealed] * mixed + offsets( spec )[revealed] + noise
    s                           = sparse_ts.series( patient_id, zip( range( n ), revealed, values ), nf=spec.nf )
    return s, latent


def gen_domain( spec, seed = 0, stream = 0 ):
    """
    Every patient of a domain, each from its own stream derived from ( seed, stream, patient ), so
    patients are independent of each-other and of how many are generated.
    """
    validate( spec )
    A                           = mixing( spec )
    result                      = []
    for p in range( spec.n_patients ):
        s, _                    = simulate( spec, misc.generator( seed, stream, p ), A,
                                            "%s-%04d" % ( spec.name, p ))
        result.append( s )
    log.info( "%s: %d patients of %d events, nf=%d" % (
        spec.name, spec.n_patients, spec.events_per_patient, spec.nf ))
    return result


def pair_specs( base, seed = 0 ):
    """
    The ( target, source ) specs of a heterogeneous pair.  The target is the base domain; the source
    has 10x its patients, and every channel's scale multiplied by U(1.5,3) and offset shifted by
    U(-5,5).
    """
    rng                         = misc.generator( seed, 0x50 )
    c                           = channels( base )
    target                      = base._replace( name="target" )
    source                      = base._replace(
        name                    = "source",
        n_patients              = base.n_patients * SOURCE_PATIENTS,
        scale                   = list( scales( base ) * rng.uniform( *SOURCE_SCALE, size=c )),
        offset                  = list( offsets( base ) + rng.uniform( *SOURCE_OFFSET, size=c )))
    return target, source


def make_heterogeneous_pair( base, seed = 0 ):
    """Returns ( target series, source series )."""
    target, source              = pair_specs( base, seed )
    return gen_domain( target, seed, stream=0 ), gen_domain( source, seed, stream=1 )


def load_spec( path ):
    """A DomainSpec from a JSON object holding any subset of its fields."""
    try:
        with open( path, 'r' ) as f:
            doc                 = json.load( f )
    except ValueError as exc:
        raise misc.format_error( "%s: not JSON: %s" % ( path, exc ))
    if not isinstance( doc, dict ):
        raise misc.format_error( "%s: a domain spec must be a JSON object" % path )
    unknown                     = sorted( set( doc ) - set( domain_spec._fields ))
    if unknown:
        raise misc.format_error( "%s: unknown domain spec fields: %s" % ( path, ", ".join( unknown )))
    spec                        = domain_spec( **doc )
    try:
        return validate( spec )
    except ValueError as exc:
        raise misc.format_error( "%s: %s" % ( path, exc ))
