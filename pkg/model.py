#!/usr/bin/env python

"""
model           -- The heterogeneous federated learning network, and the DNN baseline

    An hfl model holds nf global head networks, one local embedding network and one prediction
network:

        y'_i    = H_i( dense row i )                            (i = 0..nf-1)
        e       = E( sparse, flattened feature-major )          (w values)
        y'      = P( [ y'_0, ..., y'_nf-1, e ] )

    Training is multi-task: each head is updated from its own MSE against the label, while the
embedding and prediction networks are updated from the final prediction's MSE.  The preliminary
predictions are detached where they enter P, so the final loss never reaches the heads (unless
joint_grads is selected).  Each network has its own Adam state.

    Only the heads are ever shared with other users; they all have the identical shape, so that a
head trained on any feature of any domain may be blended into any other.
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
import copy
import json
import logging
import struct

import numpy

from . import misc
from . import nn

log                             = logging.getLogger( __package__ )

CHECKPOINT                      = b'FSCK1'
CHUNK                           = 4096          # windows per evaluation forward pass

#
# Layer designs: [ ( neurons, activation following ), ... ]
#
HEAD                            = [ (  16, 'sigmoid' ), ( 256, 'sigmoid' ), ( 64, 'lrelu' ), ( 16, 'lrelu' ), ( 1, 'none' ) ]
PREDICTION                      = [ (  32, 'sigmoid' ), ( 256, 'sigmoid' ), ( 16, 'lrelu' ), (  1, 'lrelu' ), ( 1, 'none' ) ]
DNN                             = [ (  64, 'sigmoid' ), (1024, 'sigmoid' ), ( 64, 'lrelu' ), (  1, 'none' ) ]

def embedding_design( w ):
    return [ ( 16, 'sigmoid' ), ( 256, 'sigmoid' ), ( 64, 'lrelu' ), ( 16, 'lrelu' ), ( w, 'none' ) ]


trace = collections.namedtuple(
    'ForwardTrace', [
        'preliminary',          # nf head predictions y'_i
        'embedded',             # w-vector e
        'prediction',           # final y'
        'tapes',                # ( [ head tapes ], embedding tape, prediction tape )
        ] )


losses = collections.namedtuple(
    'Losses', [
        'heads',                # nf head MSEs
        'final',                # final prediction MSE
        ] )


gradients = collections.namedtuple(
    'Gradients', [
        'heads',                # [ per-head [ ( dW, db ), ... ] ]
        'embedding',
        'prediction',
        'losses',
        ] )


def _stack( windows ):
    dense                       = numpy.stack( [ win.dense for win in windows ] )
    sparse                      = numpy.stack( [ win.sparse for win in windows ] )
    labels                      = numpy.array( [ win.label for win in windows ], dtype=numpy.float64 )[:,None]
    return dense, sparse, labels


class hfl( object ):
    """
    The nf heads, embedding and prediction networks, plus one Adam state per network.
    """
    def __init__( self, heads, embedding, prediction,
                  lr                    = 0.01,
                  beta1                 = 0.9,
                  beta2                 = 0.999,
                  eps                   = 1.0e-8,
                  joint_grads           = False ):
        if not heads:
            raise ValueError( "at least one head is required" )
        self.heads              = list( heads )
        self.embedding          = embedding
        self.prediction         = prediction
        self.joint_grads        = joint_grads
        nf, w                   = self.nf, self.w
        for i, h in enumerate( self.heads ):
            if h.shape() != self.heads[0].shape():
                raise misc.incompatible( "incompatible head: head %d shape %s differs from head 0 %s" % (
                    i, h.shape(), self.heads[0].shape() ))
        if self.heads[0].outputs != 1:
            raise ValueError( "heads must produce 1 output, not %s" % self.heads[0].outputs )
        if embedding.inputs != nf * w or embedding.outputs != w:
            raise ValueError( "embedding must map %d -> %d, not %s -> %s" % (
                nf * w, w, embedding.inputs, embedding.outputs ))
        if prediction.inputs != nf + w or prediction.outputs != 1:
            raise ValueError( "prediction must map %d -> 1, not %s -> %s" % (
                nf + w, prediction.inputs, prediction.outputs ))
        self.optimizers         = [ nn.adam( net, lr=lr, beta1=beta1, beta2=beta2, eps=eps )
                                    for net in self.networks() ]

    @property
    def nf( self ):
        return len( self.heads )

    @property
    def w( self ):
        return self.heads[0].inputs

    def networks( self ):
        return self.heads + [ self.embedding, self.prediction ]

    def __repr__( self ):
        return "<hfl nf=%d w=%d params=%d%s>" % (
            self.nf, self.w, self.param_count(), ", joint" if self.joint_grads else "" )

    # Common interface with dnn, used by the harness training loop
    def train_batch( self, batch ):
        return train_batch( self, batch )

    def evaluate( self, windows ):
        return evaluate( self, windows )

    def param_count( self ):
        return sum( nn.param_count( net ) for net in self.networks() )

    def digest( self ):
        return misc.digest( *[ nn.dumps( net ) for net in self.networks() ] )

    def clone( self ):
        return copy.deepcopy( self )


def create( nf, w, seed = 0, slope = nn.LRELU_SLOPE, **kwds ):
    """
    A freshly initialized hfl model; all networks are drawn from one seeded stream, in the order
    heads, embedding, prediction.
    """
    rng                         = misc.generator( seed )
    heads                       = [ nn.init_weights( w, HEAD, rng, slope=slope ) for _ in range( nf ) ]
    embedding                   = nn.init_weights( nf * w, embedding_design( w ), rng, slope=slope )
    prediction                  = nn.init_weights( nf + w, PREDICTION, rng, slope=slope )
    return hfl( heads, embedding, prediction, **kwds )


def _check_window( model, win ):
    if numpy.shape( win.dense ) != ( model.nf, model.w ) or numpy.shape( win.sparse ) != ( model.nf, model.w ):
        raise ValueError( "window of shape %s/%s doesn't match model nf=%d, w=%d" % (
            numpy.shape( win.dense ), numpy.shape( win.sparse ), model.nf, model.w ))


def head_forward( model, i, dense_row ):
    """The preliminary prediction y'_i of head i (0-based) from its dense feature row."""
    if not 0 <= i < model.nf:
        raise IndexError( "head index %r outside [0,%d)" % ( i, model.nf ))
    out, _                      = nn.forward( model.heads[i], dense_row )
    return float( out[0] )


def full_forward( model, win ):
    _check_window( model, win )
    preliminary                 = []
    head_tapes                  = []
    for h, row in zip( model.heads, win.dense ):
        out, t                  = nn.forward( h, row )
        preliminary.append( out[0] )
        head_tapes.append( t )
    preliminary                 = numpy.array( preliminary )
    embedded, embedding_tape    = nn.forward( model.embedding, numpy.reshape( win.sparse, -1 ))
    out, prediction_tape        = nn.forward( model.prediction, numpy.concatenate( [ preliminary, embedded ] ))
    return trace( preliminary, embedded, float( out[0] ),
                  ( head_tapes, embedding_tape, prediction_tape ))


def _forward_batch( model, dense, sparse ):
    """Batched forward pass; dense and sparse are B x nf x w."""
    B                           = dense.shape[0]
    preliminary                 = numpy.empty( ( B, model.nf ))
    head_tapes                  = []
    for i, h in enumerate( model.heads ):
        out, t                  = nn.forward( h, dense[:,i,:] )
        preliminary[:,i]        = out[:,0]
        head_tapes.append( t )
    embedded, embedding_tape    = nn.forward( model.embedding, sparse.reshape( B, -1 ))
    out, prediction_tape        = nn.forward( model.prediction, numpy.hstack( [ preliminary, embedded ] ))
    return preliminary, head_tapes, embedded, embedding_tape, out, prediction_tape


def compute_gradients( model, batch, head_loss = True ):
    """
    The gradients of the 1 + nf task losses over a batch.  With head_loss False, the heads'
    gradients hold only what the final loss contributes (exactly zero, unless joint_grads).
    """
    if not batch:
        raise ValueError( "cannot train on an empty batch" )
    for win in batch:
        _check_window( model, win )
    dense, sparse, y            = _stack( batch )
    B                           = len( batch )
    preliminary, head_tapes, _, embedding_tape, out, prediction_tape \
                                = _forward_batch( model, dense, sparse )
    head_mse                    = numpy.mean( ( preliminary - y ) ** 2, axis=0 )
    final_mse                   = float( numpy.mean( ( out - y ) ** 2 ))
    if not misc.finite( head_mse, final_mse ):
        raise misc.diverged( "diverged: head MSEs %s, final MSE %r" % ( head_mse, final_mse ))

    prediction_grads, g_in      = nn.backward( model.prediction, prediction_tape, 2.0 * ( out - y ) / B )
    embedding_grads, _          = nn.backward( model.embedding, embedding_tape, g_in[:,model.nf:] )
    head_grads                  = []
    for i, h in enumerate( model.heads ):
        g                       = numpy.zeros( ( B, 1 ))
        if head_loss:
            g                  += 2.0 * ( preliminary[:,i:i+1] - y ) / B
        if model.joint_grads:
            g                  += g_in[:,i:i+1]
        grads, _                = nn.backward( h, head_tapes[i], g )
        head_grads.append( grads )
    return gradients( head_grads, embedding_grads, prediction_grads, losses( head_mse, final_mse ))


def train_batch( model, batch ):
    """
    One R-period update: exactly one Adam step for every network, from the batch's task losses.
    Returns the losses measured before the step.
    """
    g                           = compute_gradients( model, batch )
    for net, grads, state in zip( model.networks(), g.heads + [ g.embedding, g.prediction ],
                                  model.optimizers ):
        nn.adam_step( net, grads, state )
    log.debug( "batch of %d: head MSEs %s, final MSE %.6g" % (
        len( batch ), " ".join( "%.6g" % l for l in g.losses.heads ), g.losses.final ))
    return g.losses


def predict( model, windows ):
    """Returns ( B x nf preliminary predictions, B final predictions ); no updates."""
    preliminary, final          = [], []
    for start in range( 0, len( windows ), CHUNK ):
        dense, sparse, _        = _stack( windows[start:start+CHUNK] )
        p, _, _, _, out, _      = _forward_batch( model, dense, sparse )
        preliminary.append( p )
        final.append( out[:,0] )
    return numpy.vstack( preliminary ), numpy.concatenate( final )


def evaluate( model, windows ):
    """Returns ( per-head MSE vector, final MSE ) over all windows; side-effect free."""
    if not windows:
        raise ValueError( "cannot evaluate an empty dataset" )
    for win in windows:
        _check_window( model, win )
    preliminary, final          = predict( model, windows )
    y                           = numpy.array( [ win.label for win in windows ], dtype=numpy.float64 )
    return ( numpy.mean( ( preliminary - y[:,None] ) ** 2, axis=0 ),
             float( numpy.mean( ( final - y ) ** 2 )))


#
# Checkpoints
#
#     'FSCK1', uint32 header length, a JSON header { nf, w, joint_grads, slope, networks, config },
# then for each network (heads, embedding, prediction): uint32 length, FSNN1 blob.
#
def dumps( model, config = None ):
    if config is not None and hasattr( config, '_asdict' ):
        config                  = dict( config._asdict() )
    networks                    = model.networks()
    header                      = json.dumps( {
        'nf':                   model.nf,
        'w':                    model.w,
        'joint_grads':          model.joint_grads,
        'slope':                model.heads[0].slope,
        'networks':             len( networks ),
        'config':               config,
    }, sort_keys=True ).encode( 'utf-8' )
    parts                       = [ CHECKPOINT, struct.pack( '<I', len( header )), header ]
    for net in networks:
        blob                    = nn.dumps( net )
        parts.extend( [ struct.pack( '<I', len( blob )), blob ] )
    return b''.join( parts )


def loads( blob ):
    """Returns ( model, config dict or None ); optimizer states start fresh."""
    if blob[:len( CHECKPOINT )] != CHECKPOINT:
        raise misc.format_error( "not an FSCK1 checkpoint" )
    try:
        offset                  = len( CHECKPOINT )
        size,                   = struct.unpack_from( '<I', blob, offset )
        offset                 += 4
        header                  = json.loads( blob[offset:offset+size].decode( 'utf-8' ))
        offset                 += size
        networks                = []
        for _ in range( header['networks'] ):
            size,               = struct.unpack_from( '<I', blob, offset )
            offset             += 4
            networks.append( nn.loads( blob[offset:offset+size], slope=header['slope'] ))
            offset             += size
    except ( struct.error, ValueError, KeyError ) as exc:
        raise misc.format_error( "corrupt FSCK1 checkpoint: %s" % exc )
    config                      = header.get( 'config' ) or {}
    kwds                        = dict( ( k, config[k] ) for k in ( 'lr', 'beta1', 'beta2', 'eps' ) if k in config )
    model                       = hfl( networks[:-2], networks[-2], networks[-1],
                                       joint_grads=header['joint_grads'], **kwds )
    return model, header.get( 'config' )


def save( model, path, config = None ):
    with open( path, 'wb' ) as f:
        f.write( dumps( model, config ))


def load( path ):
    with open( path, 'rb' ) as f:
        return loads( f.read() )


class dnn( object ):
    """
    The traditional baseline: one network over the flattened (feature-major) dense tensor, trained
    under the same protocol as hfl but never federated.
    """
    def __init__( self, nf, w, seed = 0, slope = nn.LRELU_SLOPE,
                  lr = 0.01, beta1 = 0.9, beta2 = 0.999, eps = 1.0e-8 ):
        self.nf                 = nf
        self.w                  = w
        self.net                = nn.init_weights( nf * w, DNN, misc.generator( seed ), slope=slope )
        self.optimizer          = nn.adam( self.net, lr=lr, beta1=beta1, beta2=beta2, eps=eps )

    def __repr__( self ):
        return "<dnn nf=%d w=%d params=%d>" % ( self.nf, self.w, self.param_count() )

    def _inputs( self, windows ):
        return numpy.stack( [ numpy.reshape( win.dense, -1 ) for win in windows ] )

    def train_batch( self, batch ):
        if not batch:
            raise ValueError( "cannot train on an empty batch" )
        y                       = numpy.array( [ win.label for win in batch ], dtype=numpy.float64 )[:,None]
        out, t                  = nn.forward( self.net, self._inputs( batch ))
        final                   = float( numpy.mean( ( out - y ) ** 2 ))
        if not misc.finite( final ):
            raise misc.diverged( "diverged: final MSE %r" % final )
        grads, _                = nn.backward( self.net, t, 2.0 * ( out - y ) / len( batch ))
        nn.adam_step( self.net, grads, self.optimizer )
        return losses( numpy.zeros( 0 ), final )

    def evaluate( self, windows ):
        if not windows:
            raise ValueError( "cannot evaluate an empty dataset" )
        y                       = numpy.array( [ win.label for win in windows ], dtype=numpy.float64 )
        final                   = []
        for start in range( 0, len( windows ), CHUNK ):
            out, _              = nn.forward( self.net, self._inputs( windows[start:start+CHUNK] ))
            final.append( out[:,0] )
        return numpy.zeros( 0 ), float( numpy.mean( ( numpy.concatenate( final ) - y ) ** 2 ))

    def param_count( self ):
        return nn.param_count( self.net )

    def digest( self ):
        return nn.digest( self.net )

    def clone( self ):
        return copy.deepcopy( self )
