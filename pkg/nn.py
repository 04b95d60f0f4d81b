#!/usr/bin/env python

"""
nn              -- A minimal dense neural network kernel

    Multi-layer perceptrons of affine layers, each followed by an activation (sigmoid, leaky-ReLU
or none), with reverse-mode gradients and the Adam optimizer.  All arithmetic is float64.

    A network is an 'mlp': an ordered list of layer( W, b, activation ) with W shaped out x in.
forward() accepts a single input vector or a batch (one input per row), and returns a tape of the
layer inputs and pre-activations sufficient for backward():

        out, tape       = forward( net, x )
        grads, g_in     = backward( net, tape, d_loss/d_out )
        adam_step( net, grads, state )

    The FSNN1 serialization (dumps/loads) is the format carried by the model pools:

        'FSNN1', uint32 layer count; per layer: uint32 out, uint32 in, uint8 activation tag
        (0 none, 1 sigmoid, 2 lrelu), out*in float64 W (row-major), out float64 b.  Little-endian.
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
import math
import struct

import numpy

from . import misc

MAGIC                           = b'FSNN1'
ACTIVATIONS                     = ( 'none', 'sigmoid', 'lrelu' )        # FSNN1 tag is the index
LRELU_SLOPE                     = 0.01


layer = collections.namedtuple(
    'Layer', [
        'W',                    # out x in
        'b',                    # out
        'activation',           # one of ACTIVATIONS
        ] )


tape = collections.namedtuple(
    'Tape', [
        'steps',                # [ ( layer input, pre-activation ), ... ]
        'single',               # forward() was given a single vector, not a batch
        ] )


class mlp( object ):
    """
    An ordered list of layers, whose dimensions must chain.  The leaky-ReLU negative slope is a
    property of the network (it is not carried by FSNN1; loads() assumes the default).
    """
    __slots__                   = [ 'layers', 'slope' ]

    def __init__( self, layers, slope = LRELU_SLOPE ):
        self.slope              = slope
        self.layers             = []
        for W, b, activation in layers:
            W                   = numpy.array( W, dtype=numpy.float64, ndmin=2 )
            b                   = numpy.array( b, dtype=numpy.float64 ).reshape( -1 )
            if activation not in ACTIVATIONS:
                raise ValueError( "unknown activation %r; expected one of %s" % (
                    activation, ", ".join( ACTIVATIONS )))
            if b.shape != ( W.shape[0], ):
                raise ValueError( "layer %d: bias of %d entries for %d outputs" % (
                    len( self.layers ), b.size, W.shape[0] ))
            if self.layers and self.layers[-1].W.shape[0] != W.shape[1]:
                raise ValueError( "layer %d: %d inputs don't chain from %d outputs" % (
                    len( self.layers ), W.shape[1], self.layers[-1].W.shape[0] ))
            self.layers.append( layer( W, b, activation ))

    @property
    def inputs( self ):
        return self.layers[0].W.shape[1] if self.layers else None

    @property
    def outputs( self ):
        return self.layers[-1].W.shape[0] if self.layers else None

    def shape( self ):
        return [ ( l.W.shape[0], l.W.shape[1], l.activation ) for l in self.layers ]

    def __len__( self ):
        return len( self.layers )

    def __repr__( self ):
        return "<mlp %s>" % " -> ".join(
            [ str( self.inputs ) ] + [ "%d(%s)" % ( o, a ) for o, _, a in self.shape() ] )


#
# Activations, and their derivatives with respect to the pre-activation z
#
def sigmoid( z ):
    return numpy.exp( -numpy.logaddexp( 0.0, -z ))


def lrelu( z, slope = LRELU_SLOPE ):
    return numpy.where( z > 0, z, slope * z )


def activate( z, activation, slope = LRELU_SLOPE ):
    if activation == 'sigmoid':
        return sigmoid( z )
    if activation == 'lrelu':
        return lrelu( z, slope )
    return z


def derivative( z, activation, slope = LRELU_SLOPE ):
    if activation == 'sigmoid':
        s                       = sigmoid( z )
        return s * ( 1.0 - s )
    if activation == 'lrelu':
        return numpy.where( z > 0, 1.0, slope )
    return numpy.ones_like( z )


def forward( net, x ):
    """
    Apply the network to a single input vector (returning a vector), or to a batch of input rows
    (returning a batch of output rows).  Pure; returns ( output, tape ).
    """
    a                           = numpy.asarray( x, dtype=numpy.float64 )
    single                      = a.ndim == 1
    if single:
        a                       = a[None,:]
    if a.ndim != 2 or a.shape[1] != net.inputs:
        raise ValueError( "input of shape %s doesn't match network inputs %s" % (
            numpy.shape( x ), net.inputs ))
    steps                       = []
    for l in net.layers:
        z                       = a.dot( l.W.T ) + l.b
        steps.append( ( a, z ))
        a                       = activate( z, l.activation, net.slope )
    return ( a[0] if single else a ), tape( steps, single )


def backward( net, t, output_gradient ):
    """
    Given the tape of a matching forward() and the gradient of some loss with respect to the
    output(s), return ( [ ( dW, db ), ... ], input gradient ).  Gradients of a batch are summed
    over its rows.
    """
    if len( t.steps ) != len( net.layers ):
        raise ValueError( "tape of %d steps doesn't match a network of %d layers" % (
            len( t.steps ), len( net.layers )))
    g                           = numpy.asarray( output_gradient, dtype=numpy.float64 )
    if t.single:
        g                       = g[None,:] if g.ndim == 1 else g
    batch                       = t.steps[0][0].shape[0] if t.steps else g.shape[0]
    if g.shape != ( batch, net.outputs ):
        raise ValueError( "output gradient of shape %s doesn't match outputs ( %d, %s )" % (
            numpy.shape( output_gradient ), batch, net.outputs ))
    grads                       = [ None ] * len( net.layers )
    for k in reversed( range( len( net.layers ))):
        a, z                    = t.steps[k]
        l                       = net.layers[k]
        dz                      = g * derivative( z, l.activation, net.slope )
        grads[k]                = ( dz.T.dot( a ), dz.sum( axis=0 ))
        g                       = dz.dot( l.W )
    return grads, ( g[0] if t.single else g )


def mse( prediction, target ):
    """Mean of the squared componentwise differences."""
    p                           = numpy.asarray( prediction, dtype=numpy.float64 )
    y                           = numpy.asarray( target, dtype=numpy.float64 )
    if p.shape != y.shape:
        raise ValueError( "prediction of shape %s vs. target of shape %s" % ( p.shape, y.shape ))
    if not p.size:
        raise ValueError( "mse of empty vectors" )
    return float( numpy.mean( ( p - y ) ** 2 ))


class adam( object ):
    """
    Adam optimizer state for one network: first and second moments shaped like each W and b, and
    the step counter t.  Single-owner; never share one between networks or threads.
    """
    def __init__( self, net, lr = 0.01, beta1 = 0.9, beta2 = 0.999, eps = 1.0e-8 ):
        self.lr                 = lr
        self.beta1              = beta1
        self.beta2              = beta2
        self.eps                = eps
        self.t                  = 0
        self.m                  = [ ( numpy.zeros_like( l.W ), numpy.zeros_like( l.b )) for l in net.layers ]
        self.v                  = [ ( numpy.zeros_like( l.W ), numpy.zeros_like( l.b )) for l in net.layers ]

    def __repr__( self ):
        return "<adam t=%d lr=%g>" % ( self.t, self.lr )


def adam_step( net, grads, state ):
    """
    One bias-corrected Adam update of net's weights (in place), advancing state.t by exactly one.
    Returns ( net, state ).
    """
    if len( grads ) != len( net.layers ) or len( state.m ) != len( net.layers ):
        raise ValueError( "%d gradients / %d moments for %d layers" % (
            len( grads ), len( state.m ), len( net.layers )))
    for l, ( dW, db ) in zip( net.layers, grads ):
        if dW.shape != l.W.shape or db.shape != l.b.shape:
            raise ValueError( "gradient shapes %s, %s don't match layer %s, %s" % (
                dW.shape, db.shape, l.W.shape, l.b.shape ))
        if not misc.finite( dW, db ):
            raise misc.diverged( "non-finite gradient" )
    state.t                    += 1
    b1, b2                      = state.beta1, state.beta2
    bc1                         = 1.0 - b1 ** state.t
    bc2                         = 1.0 - b2 ** state.t
    for k, ( l, ( dW, db )) in enumerate( zip( net.layers, grads )):
        for p, g, m, v in ( ( l.W, dW, state.m[k][0], state.v[k][0] ),
                            ( l.b, db, state.m[k][1], state.v[k][1] )):
            m                  *= b1
            m                  += ( 1.0 - b1 ) * g
            v                  *= b2
            v                  += ( 1.0 - b2 ) * ( g * g )
            p                  -= state.lr * ( m / bc1 ) / ( numpy.sqrt( v / bc2 ) + state.eps )
    return net, state


def init_weights( inputs, spec, seed = 0, slope = LRELU_SLOPE ):
    """
    A new network taking 'inputs' values, with layers specified as [ ( outputs, activation ), ... ].
    Weights are uniform in +/- 1/sqrt( fan_in ), biases zero.  The seed may be an integer or a
    numpy Generator (to draw several networks from one stream).
    """
    rng                         = seed if isinstance( seed, numpy.random.Generator ) else misc.generator( seed )
    layers                      = []
    fan_in                      = inputs
    for outputs, activation in spec:
        if fan_in < 1 or outputs < 1:
            raise ValueError( "zero dimension: layer %d is %r x %r" % ( len( layers ), outputs, fan_in ))
        bound                   = 1.0 / math.sqrt( fan_in )
        layers.append( ( rng.uniform( -bound, bound, size=( outputs, fan_in )),
                         numpy.zeros( outputs ), activation ))
        fan_in                  = outputs
    return mlp( layers, slope=slope )


def param_count( net ):
    return sum( l.W.size + l.b.size for l in net.layers )


def clone( net ):
    return mlp( [ ( l.W.copy(), l.b.copy(), l.activation ) for l in net.layers ], slope=net.slope )


def dumps( net ):
    parts                       = [ MAGIC, struct.pack( '<I', len( net.layers )) ]
    for l in net.layers:
        outputs, inputs         = l.W.shape
        parts.append( struct.pack( '<IIB', outputs, inputs, ACTIVATIONS.index( l.activation )))
        parts.append( l.W.astype( '<f8' ).tobytes() )
        parts.append( l.b.astype( '<f8' ).tobytes() )
    return b''.join( parts )


def loads( blob, slope = LRELU_SLOPE ):
    if blob[:len( MAGIC )] != MAGIC:
        raise misc.format_error( "not an FSNN1 network blob" )
    offset                      = len( MAGIC )
    try:
        count,                  = struct.unpack_from( '<I', blob, offset )
        offset                 += 4
        layers                  = []
        for _ in range( count ):
            outputs, inputs, tag = struct.unpack_from( '<IIB', blob, offset )
            offset             += 9
            W                   = numpy.frombuffer( blob, dtype='<f8', count=outputs * inputs, offset=offset )
            offset             += 8 * outputs * inputs
            b                   = numpy.frombuffer( blob, dtype='<f8', count=outputs, offset=offset )
            offset             += 8 * outputs
            layers.append( ( W.astype( numpy.float64 ).reshape( outputs, inputs ),
                             b.astype( numpy.float64 ), ACTIVATIONS[tag] ))
        net                     = mlp( layers, slope=slope )
    except ( struct.error, ValueError, IndexError ) as exc:
        raise misc.format_error( "truncated or corrupt FSNN1 blob: %s" % exc )
    if offset != len( blob ):
        raise misc.format_error( "%d trailing bytes after FSNN1 blob" % ( len( blob ) - offset ))
    return net


def digest( net ):
    return misc.digest( dumps( net ))
