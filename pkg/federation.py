#!/usr/bin/env python

"""
federation      -- Client-side heterogeneous federated learning

    Users regularly publish their head networks to a pool.  Every R periods (one training batch),
a user whose switch is open selects, for each of its own heads independently, the pooled source
head that would have best predicted its label from that head's dense feature rows over the batch
just trained, and blends it in:

        H_i     <- alpha * selected + ( 1 - alpha ) * H_i

    The embedding and prediction networks never leave the user, and are never touched here.

    The switch opens only once the validation loss has failed to improve (strictly, versus the best
seen so far) for 'patience' (3) consecutive epochs, and closes again on the next improvement.

    A pool is anything providing:

        .publish( entry )               -> ( accepted, stored version )
        .fetch( exclude_user=None, prefix=None )
                                        -> [ entry, ... ]

    and raising misc.pool_error on transport failures (see pool_service).
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
import logging
import math

import numpy

from . import misc
from . import nn

log                             = logging.getLogger( __package__ )

SCORERS                         = ( 'squared', 'signed' )
MODES                           = ( 'no', 'random', 'always', 'hfl' )
PATIENCE                        = 3


entry = collections.namedtuple(
    'PoolEntry', [
        'user_id',
        'feature_index',
        'version',              # strictly increasing per ( user_id, feature_index )
        'weights',              # nn.mlp, of the canonical head shape
        'published_at',         # wall-clock
        ] )


def key( e ):
    """The pool key of an entry, in its tie-breaking (lexicographic) order."""
    return ( str( e.user_id ), int( e.feature_index ))


switch = collections.namedtuple(
    'SwitchState', [
        'best',                 # best validation loss seen
        'since',                # epochs since it last (strictly) improved
        'patience',
        ] )
switch.__new__.__defaults__     = ( misc.inf, 0, PATIENCE )


selection = collections.namedtuple(
    'Selection', [
        'head',
        'user_id',
        'feature_index',
        'version',
        'score',
        ] )


audit = collections.namedtuple(
    'Audit', [
        'epoch',
        'batch',
        'user_id',
        'mode',
        'alpha',
        'selections',           # [ selection, ... ], one per head
        'skipped',              # None, or why the round was skipped
        ] )


def audit_record( a, **extra ):
    """A JSON-able dict of an audit, for the line-delimited audit log."""
    record                      = dict( a._asdict(), selections=[ dict( s._asdict() ) for s in a.selections ] )
    record.update( extra )
    return record


def update_switch( state, epoch_validation_loss ):
    """
    Returns ( new state, FL active next epoch ).  A strictly lower validation loss than the best
    seen resets the count of epochs without improvement; anything else increments it.
    """
    if not misc.finite( epoch_validation_loss ):
        raise misc.diverged( "non-finite validation loss %r" % ( epoch_validation_loss, ))
    if epoch_validation_loss < state.best:
        state                   = state._replace( best=epoch_validation_loss, since=0 )
    else:
        state                   = state._replace( since=state.since + 1 )
    return state, state.since >= state.patience


def score( net, recent, scorer = 'squared' ):
    """
    The preliminary prediction error of a head over recent ( dense_row, label ) pairs: the sum of
    squared residuals, or (scorer='signed') the plain sum of signed residuals.
    """
    rows                        = numpy.array( [ row for row, _ in recent ], dtype=numpy.float64 )
    labels                      = numpy.array( [ y for _, y in recent ], dtype=numpy.float64 )
    out, _                      = nn.forward( net, rows )
    residual                    = labels - out[:,0]
    if scorer == 'squared':
        return float( numpy.sum( residual * residual ))
    if scorer == 'signed':
        return float( numpy.sum( residual ))
    raise ValueError( "unknown selection score %r; expected one of %s" % ( scorer, ", ".join( SCORERS )))


def select_head( pool, recent, scorer = 'squared' ):
    """
    Returns ( best entry, [ ( key, score ), ... ] ): the pooled head with the lowest score over the
    recent pairs, ties going to the lexicographically lowest ( user_id, feature_index ).
    """
    if not pool:
        raise misc.empty_pool( "empty pool" )
    if not recent:
        raise ValueError( "no recent samples to score pool heads against" )
    scored                      = [ ( e, score( e.weights, recent, scorer )) for e in pool ]
    best, _                     = min( scored, key=lambda es: (
        es[1] if math.isfinite( es[1] ) else misc.inf, key( es[0] )))
    return best, [ ( key( e ), s ) for e, s in scored ]


def select_random( pool, rng ):
    if not pool:
        raise misc.empty_pool( "empty pool" )
    ordered                     = sorted( pool, key=key )
    return ordered[int( rng.integers( len( ordered )))]


def blend_head( target, selected, alpha ):
    """A new head: alpha * selected + ( 1 - alpha ) * target, parameter by parameter."""
    if not 0 <= alpha <= 1:
        raise ValueError( "blending alpha %r outside [0,1]" % ( alpha, ))
    if target.shape() != selected.shape():
        raise misc.incompatible( "incompatible head: %s vs. %s" % ( target.shape(), selected.shape() ))
    if alpha == 0:
        return nn.clone( target )
    if alpha == 1:
        blended                 = nn.clone( selected )
        blended.slope           = target.slope
        return blended
    return nn.mlp( [ ( alpha * s.W + ( 1 - alpha ) * t.W,
                       alpha * s.b + ( 1 - alpha ) * t.b,
                       t.activation )
                     for t, s in zip( target.layers, selected.layers ) ], slope=target.slope )


def recent_pairs( batch, nf ):
    """Per head, the ( dense_row, label ) pairs of a just-trained batch."""
    return [ [ ( win.dense[i], win.label ) for win in batch ] for i in range( nf ) ]


def fl_round( model, pool, recent, alpha,
              scorer                    = 'squared',
              mode                      = 'hfl',
              rng                       = None,
              epoch                     = None,
              batch                     = None,
              user_id                   = None ):
    """
    One federation round: for each head independently, select a pool entry (by score, or uniformly
    at random in 'random' mode) and blend it into the head.  Only model.heads are replaced.
    Returns the audit record; an empty pool skips the round.
    """
    if not pool:
        log.warning( "user %s epoch %s batch %s: empty pool; federation round skipped" % (
            user_id, epoch, batch ))
        return audit( epoch, batch, user_id, mode, alpha, [], "empty pool" )
    selections                  = []
    blended                     = []
    for i in range( model.nf ):
        if mode == 'random':
            chosen              = select_random( pool, rng )
            s                   = score( chosen.weights, recent[i], scorer ) if recent[i] else misc.nan
        else:
            chosen, scores      = select_head( pool, recent[i], scorer )
            s                   = dict( scores )[key( chosen )]
        blended.append( blend_head( model.heads[i], chosen.weights, alpha ))
        selections.append( selection( i, chosen.user_id, chosen.feature_index, chosen.version, s ))
    model.heads[:]              = blended
    log.debug( "user %s epoch %s batch %s: selected %s" % (
        user_id, epoch, batch, ", ".join( "H%d<-%s/%d(%.4g)" % ( s.head, s.user_id, s.feature_index, s.score )
                                          for s in selections )))
    return audit( epoch, batch, user_id, mode, alpha, selections, None )


#
# Publishing
#
def head_entries( model, user_id, versions, now = None ):
    """New pool entries for each of model's heads (cloned), advancing the per-head versions."""
    if now is None:
        now                     = misc.timer()
    entries                     = []
    for i, h in enumerate( model.heads ):
        versions[i]             = versions.get( i, 0 ) + 1
        entries.append( entry( user_id, i, versions[i], nn.clone( h ), now ))
    return entries


def send( pool, entries ):
    """
    Publish entries; returns each one's version if accepted, else None.  A pool refusing an entry
    (stale, or not of the pool's canonical head shape) is logged, not raised; transport failures
    raise misc.pool_error.
    """
    acked                       = []
    for e in entries:
        try:
            accepted, stored    = pool.publish( e )
        except ( misc.incompatible, misc.protocol_error ) as exc:
            log.warning( "pool refused %s/%d v%d: %s" % ( e.user_id, e.feature_index, e.version, exc ))
            acked.append( None )
            continue
        if not accepted:
            log.warning( "pool rejected %s/%d v%d as stale; holds v%s" % (
                e.user_id, e.feature_index, e.version, stored ))
        acked.append( e.version if accepted else None )
    return acked


def publish_heads( model, user_id, pool, versions, now = None ):
    """
    Publish every head of model as user_id, one new version per head; versions is the user's
    { head: last version } counters, advanced in place.  The model is not modified.  Transport
    failures raise misc.pool_error.
    """
    return send( pool, head_entries( model, user_id, versions, now ))


class publisher( object ):
    """
    Publishes a user's heads after every batch, without ever interrupting its training: transport
    failures are logged and the unsent entries are retained (in a bounded queue) for a later retry.
    Newer versions supersede anything still pending.
    """
    def __init__( self, user_id, pool, retries = 64 ):
        self.user_id            = user_id
        self.pool               = pool
        self.versions           = {}
        self.pending            = collections.deque( maxlen=retries )
        self.failures           = 0

    def publish( self, model, now = None ):
        entries                 = head_entries( model, self.user_id, self.versions, now )
        self.pending.clear()
        try:
            return send( self.pool, entries )
        except misc.pool_error as exc:
            self.failures      += 1
            self.pending.extend( entries )
            log.warning( "user %s: publish failed (%d so far); will retry: %s" % (
                self.user_id, self.failures, exc ))
            return None

    def flush( self ):
        """Retry any pending entries; True iff nothing remains pending."""
        if not self.pending:
            return True
        try:
            send( self.pool, list( self.pending ))
        except misc.pool_error as exc:
            log.warning( "user %s: retry of %d entries failed: %s" % (
                self.user_id, len( self.pending ), exc ))
            return False
        self.pending.clear()
        return True
