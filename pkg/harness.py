#!/usr/bin/env python

"""
harness         -- Experiment runner and command-line interface

    An experiment takes a target domain and (optionally) a source domain of raw series, and for each
label task (each channel taking its turn as the label, predicted from all the others) and each
repeat:

    1) splits each domain's patients into train/validation/test,
    2) trains the target user (and, when federating, the source users) for 'epochs' epochs of
       R-sample batches, publishing heads to the pool and federating per the mode:

           no           -- never federate
           random       -- every batch, blend in a uniformly random pool head per head
           always       -- every batch, blend in the best-scoring pool head per head
           hfl          -- as always, but only in epochs the validation-loss switch has opened

    3) keeps the target model with the lowest validation MSE (save-best), and reports its test MSE.

    Every mode (and the DNN baseline) of one task and repeat sees the same patients, the same
initial target weights and the same per-epoch sample orders; the report carries checksums of both,
so this is verifiable.

    Users run interleaved batch by batch on one thread ("lockstep", reproducible), or each on its
own thread against the shared pool ("threads").
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

import os
import sys

# Module Script.  Ensure that importing works (whether fedsparse installed or not) with:
#   python -m fedsparse.harness
#   ./fedsparse/harness.py
#   ./harness.py
if __name__ == "__main__" and not __package__:
    __package__                 = "fedsparse"
    try:
        import fedsparse
    except ImportError:
        # Couldn't import; include our containing directory path in sys.path
        sys.path.insert( 0, os.path.dirname( os.path.dirname( os.path.abspath( __file__ ))))
        import fedsparse

import argparse
import collections
import csv
import json
import logging
import math
import threading
import uuid

import numpy

from . import federation
from . import misc
from . import model
from . import pool_service
from . import sparse_ts
from . import synth
from .version import __version__

log                             = logging.getLogger( __package__ )

SCHEDULES                       = ( 'lockstep', 'threads' )
BASELINE                        = 'dnn'
METRICS                         = [ 'kind', 'system', 'task', 'repeat', 'repeats', 'valid_mse', 'test_mse', 'rank',
                                    'best_epoch', 'epochs', 'fl_rounds', 'pool_failures', 'params', 'seconds', 'failed', 'error',
                                    'weights_digest', 'data_digest' ]
FLOATS                          = ( 'valid_mse', 'test_mse', 'seconds' )
INTEGERS                        = ( 'task', 'repeat', 'repeats', 'rank', 'best_epoch', 'epochs', 'fl_rounds', 'pool_failures',
                                    'params', 'failed' )

# Purposes of the seeded streams derived from ( seed, repeat, task, user or domain, purpose )
WEIGHTS, ORDER, SELECT, SPLIT   = range( 4 )


run_config = collections.namedtuple(
    'RunConfig', [
        'w',                    # window size
        'R',                    # samples per batch (and per federation round)
        'alpha',                # blending weight of a selected pool head
        'lr',
        'epochs',
        'repeats',
        'seed',
        'label_index',          # None: every channel takes its turn as the label
        'mode',                 # in federation.MODES
        'pool',                 # pool endpoint (see pool_service.connect); None: $FEDSPARSE_POOL
        'joint_grads',          # let the final loss reach the heads
        'selection_score',      # in federation.SCORERS
        'normalize',            # z-score features per user
        'lrelu_slope',
        'beta1',
        'beta2',
        'eps',
        'patience',             # epochs without improvement before the switch opens
        'include_self',         # may users select their own published heads
        'sources_learn',        # do source users train alongside the target
        'pretrain_sources',     # train the source users (unfederated) before the target starts
        'schedule',             # in SCHEDULES
        'ratios',               # train/validation/test patient fractions
        'baseline',             # also run the DNN baseline
        'sources',              # source users the source domain's patients are dealt into
        'checkpoints',          # directory for each repeat's save-best checkpoint
        ] )
run_config.__new__.__defaults__ = (
    3, 50, 0.2, 0.01, 50, 5, 0, None, 'hfl', None, False, 'squared', False,
    0.01, 0.9, 0.999, 1.0e-8, federation.PATIENCE, False, True, False, 'lockstep', ( 0.6, 0.2, 0.2 ),
    True, 1, None )


def validate( config ):
    """Returns config if it is sound; raises misc.format_error naming the offending field."""
    def check( field, ok, expected ):
        if not ok:
            raise misc.format_error( "config %s=%r: expected %s" % ( field, getattr( config, field ), expected ))
    check( 'w',                 config.w >= 1,                                  ">= 1" )
    check( 'R',                 config.R >= 1,                                  ">= 1" )
    check( 'alpha',             0 <= config.alpha <= 1,                         "0 <= alpha <= 1" )
    check( 'lr',                config.lr >= 0,                                 ">= 0" )
    check( 'epochs',            config.epochs >= 1,                             ">= 1" )
    check( 'repeats',           config.repeats >= 1,                            ">= 1" )
    check( 'label_index',       config.label_index is None or config.label_index >= 0, "None or >= 0" )
    check( 'mode',              config.mode in federation.MODES,                "one of %s" % ", ".join( federation.MODES ))
    check( 'selection_score',   config.selection_score in federation.SCORERS,   "one of %s" % ", ".join( federation.SCORERS ))
    check( 'schedule',          config.schedule in SCHEDULES,                   "one of %s" % ", ".join( SCHEDULES ))
    check( 'lrelu_slope',       config.lrelu_slope >= 0,                        ">= 0" )
    check( 'beta1',             0 <= config.beta1 < 1,                          "0 <= beta1 < 1" )
    check( 'beta2',             0 <= config.beta2 < 1,                          "0 <= beta2 < 1" )
    check( 'eps',               config.eps > 0,                                 "> 0" )
    check( 'patience',          config.patience >= 1,                           ">= 1" )
    check( 'sources',           config.sources >= 1,                            ">= 1" )
    check( 'ratios',            len( config.ratios ) == 3 and min( config.ratios ) >= 0
                                and abs( sum( config.ratios ) - 1 ) < 1.0e-9,  "3 fractions summing to 1" )
    return config


def load_config( path = None, **overrides ):
    """
    A RunConfig from an (optional) JSON file holding any subset of its fields, with any non-None
    overrides (eg. from the command line) taking precedence.
    """
    doc                         = {}
    if path:
        try:
            with open( path, 'r' ) as f:
                doc             = json.load( f )
        except ValueError as exc:
            raise misc.format_error( "%s: not JSON: %s" % ( path, exc ))
        if not isinstance( doc, dict ):
            raise misc.format_error( "%s: a run config must be a JSON object" % path )
    doc.update( ( k, v ) for k, v in overrides.items() if v is not None )
    unknown                     = sorted( set( doc ) - set( run_config._fields ))
    if unknown:
        raise misc.format_error( "%s: unknown config fields: %s" % ( path or "config", ", ".join( unknown )))
    if 'ratios' in doc:
        doc['ratios']           = tuple( doc['ratios'] )
    try:
        return validate( run_config( **doc ))
    except TypeError as exc:
        raise misc.format_error( "%s: %s" % ( path or "config", exc ))


#
# Data preparation
#
partition = collections.namedtuple(
    'Partition', [
        'task',                 # the raw channel used as the label
        'nf',
        'train',                # target windows
        'valid',
        'test',
        'sources',              # [ windows, ... ], one per source user
        'source_valid',
        'skipped',              # labels lacking history, across both domains
        ] )


def count_channels( *domains ):
    """The number of raw channels (1 + the highest channel observed) across the domains."""
    highest                     = max( [ e.channel for d in domains if d for s in d for e in s.events ] or [ -1 ] )
    if highest < 1:
        raise ValueError( "at least 2 channels are required to predict one from another" )
    return highest + 1


def tasks( config, channels ):
    if config.label_index is None:
        return list( range( channels ))
    if config.label_index >= channels:
        raise misc.format_error( "config label_index=%d: only %d channels" % ( config.label_index, channels ))
    return [ config.label_index ]


def _flatten( groups ):
    return [ win for g in groups for win in g ]


def _datasets( config, domain, task, channels ):
    return [ sparse_ts.build_dataset( sparse_ts.select_label( s, task, channels ), channels - 1, config.w )
             for s in domain ]


def prepare( config, target, source, task, repeat ):
    """
    The windows of one label task and repeat: the target's patients are split three ways, the
    source's training patients dealt round-robin into config.sources users.
    """
    channels                    = count_channels( target, source )
    nf                          = channels - 1
    targets                     = _datasets( config, target, task, channels )
    train, valid, test          = sparse_ts.split_patients( [ d.windows for d in targets ], config.ratios,
                                                            seed=misc.derive( config.seed, repeat, task, 0, SPLIT ))
    train, valid, test          = _flatten( train ), _flatten( valid ), _flatten( test )
    if not ( train and valid and test ):
        raise misc.patients_error( "too few patients: task %d target split has %d/%d/%d windows" % (
            task, len( train ), len( valid ), len( test )))
    skipped                     = sum( d.skipped for d in targets )
    users, source_valid         = [], []
    if source:
        sources                 = _datasets( config, source, task, channels )
        s_train, s_valid, _     = sparse_ts.split_patients( [ d.windows for d in sources ], config.ratios,
                                                            seed=misc.derive( config.seed, repeat, task, 1, SPLIT ))
        users                   = [ _flatten( s_train[k::config.sources] ) for k in range( config.sources ) ]
        users                   = [ u for u in users if u ]
        source_valid            = _flatten( s_valid )
        skipped                += sum( d.skipped for d in sources )
    log.info( "task %d repeat %d: target %d/%d/%d windows, %d source users of %s windows, %d labels skipped" % (
        task, repeat, len( train ), len( valid ), len( test ), len( users ),
        "/".join( str( len( u )) for u in users ) or "0", skipped ))
    return partition( task, nf, train, valid, test, users, source_valid, skipped )


#
# Users
#
class user( object ):
    """
    One participant's training loop: its model and data, its switch, its save-best model, and
    (when federating) its publisher.  Driven by train_users, one batch at a time.
    """
    def __init__( self, user_id, index, net, train, valid, config, task, repeat,
                  mode                  = 'no',
                  pool                  = None,
                  prefix                = "",
                  test                  = None ):
        self.user_id            = user_id
        self.net                = net
        self.config             = config
        self.mode               = mode
        self.pool               = pool if mode != 'no' else None
        self.prefix             = prefix
        norm                    = sparse_ts.normalizer( train ) if config.normalize else list
        self.train              = norm( train )
        self.valid              = norm( valid if valid else train )
        self.test               = norm( test ) if test else []
        self.order              = misc.generator( config.seed, repeat, task, index, ORDER )
        self.select             = misc.generator( config.seed, repeat, task, index, SELECT )
        self.publisher          = federation.publisher( user_id, self.pool ) if self.pool is not None else None
        self.state              = federation.switch( patience=config.patience )
        self.active             = mode in ( 'random', 'always' )
        self.epoch              = 0
        self.orders             = []
        self.history            = []    # validation MSE per epoch
        self.gates              = []    # was federation active, per epoch
        self.audits             = []
        self.pool_failures      = 0     # federation rounds skipped for want of the pool
        self.best_valid         = misc.inf
        self.best_epoch         = None
        self.best               = None

    def __repr__( self ):
        return "<user %s: %s, %d train windows>" % ( self.user_id, self.mode, len( self.train ))

    def publish( self ):
        if self.publisher is not None:
            self.publisher.flush()
            self.publisher.publish( self.net )

    def batches( self ):
        """This epoch's batches of R samples, in a freshly shuffled order."""
        order                   = self.order.permutation( len( self.train ))
        self.orders.append( order )
        R                       = self.config.R
        return [ [ self.train[i] for i in order[start:start+R] ] for start in range( 0, len( order ), R ) ]

    def step( self, batch, number ):
        l                       = self.net.train_batch( batch )
        log.debug( "user %s epoch %d batch %d: final MSE %.6g" % ( self.user_id, self.epoch, number, l.final ))
        self.publish()
        if self.active and self.pool is not None:
            self.federate( batch, number )

    def federate( self, batch, number ):
        exclude                 = None if self.config.include_self else self.user_id
        try:
            pooled              = self.pool.fetch( exclude, prefix=self.prefix or None )
        except ( misc.pool_error, misc.protocol_error ) as exc:
            self.pool_failures += 1
            log.warning( "user %s epoch %d batch %d: pool unavailable; federation round skipped: %s" % (
                self.user_id, self.epoch, number, exc ))
            self.audits.append( federation.audit( self.epoch, number, self.user_id, self.mode,
                                                  self.config.alpha, [], "pool unavailable" ))
            return
        self.audits.append( federation.fl_round(
            self.net, pooled, federation.recent_pairs( batch, self.net.nf ), self.config.alpha,
            scorer=self.config.selection_score, mode=self.mode, rng=self.select,
            epoch=self.epoch, batch=number, user_id=self.user_id ))

    def end_epoch( self ):
        """Validate, remember the best model so far, and update the switch for the next epoch."""
        _, valid                = self.net.evaluate( self.valid )
        self.history.append( valid )
        self.gates.append( self.active )
        self.state, gate        = federation.update_switch( self.state, valid )
        if valid < self.best_valid:
            self.best_valid     = valid
            self.best_epoch     = self.epoch
            self.best           = self.net.clone()
            log.info( "user %s epoch %d: validation MSE %.6g (best)" % ( self.user_id, self.epoch, valid ))
        else:
            log.info( "user %s epoch %d: validation MSE %.6g; best %.6g at epoch %d" % (
                self.user_id, self.epoch, valid, self.best_valid, self.best_epoch ))
        if self.mode == 'hfl' and gate != self.active:
            log.info( "user %s epoch %d: switch %s" % (
                self.user_id, self.epoch, "opened; federating" if gate else "closed on improvement" ))
            self.active         = gate
        self.epoch             += 1

    def data_digest( self ):
        return misc.digest( numpy.array( [ win.label for win in self.train ] ), *self.orders )


def train_users( users, epochs, schedule = 'lockstep' ):
    """
    Train the users for the given epochs.  In lockstep, their batches are interleaved one at a time
    (each user in turn), and every user completes each epoch before any starts the next.  With
    threads, each user runs its own loop; the first failure is re-raised once all have stopped.
    """
    if schedule == 'lockstep':
        for _ in range( epochs ):
            plans               = [ ( u, u.batches() ) for u in users ]
            for number in range( max( len( batches ) for _, batches in plans )):
                for u, batches in plans:
                    if number < len( batches ):
                        u.step( batches[number], number )
            for u in users:
                u.end_epoch()
        return

    failures                    = []
    def loop( u ):
        try:
            for _ in range( epochs ):
                for number, batch in enumerate( u.batches() ):
                    u.step( batch, number )
                u.end_epoch()
        except Exception as exc:
            log.warning( "user %s failed: %s" % ( u.user_id, exc ))
            failures.append( exc )
    threads                     = [ threading.Thread( target=loop, args=( u, ), name=str( u.user_id ))
                                    for u in users ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if failures:
        raise failures[0]


outcome = collections.namedtuple(
    'Outcome', [
        'row',
        'audits',               # [ federation.audit, ... ] of every user
        'history',              # target validation MSE per epoch
        'gates',                # target federation active, per epoch
        ] )


row = collections.namedtuple(
    'Row', [
        'system',
        'task',
        'repeat',
        'valid_mse',            # best (save-best) validation MSE
        'test_mse',             # of the save-best model
        'best_epoch',
        'epochs',
        'fl_rounds',            # target federation rounds performed
        'pool_failures',        # target federation rounds skipped, the pool being unavailable
        'params',
        'seconds',
        'weights_digest',       # of the target's initial weights
        'data_digest',          # of the target's training labels and sample orders
        'error',                # None, or why the repeat failed
        ] )


def _create( config, nf, system, seed ):
    kwds                        = dict( lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps )
    if system == BASELINE:
        return model.dnn( nf, config.w, seed=seed, slope=config.lrelu_slope, **kwds )
    return model.create( nf, config.w, seed=seed, slope=config.lrelu_slope,
                         joint_grads=config.joint_grads, **kwds )


def _pretrained( config, part, repeat, k, system, cache ):
    """
    Source user k's save-best model after unfederated training on its own windows.  It depends only
    on the config, task, repeat and user, so each is trained once per cache and cloned per mode.
    """
    if cache is not None and k in cache:
        return cache[k].clone()
    src                         = _create( config, part.nf, system, misc.derive( config.seed, repeat, part.task, k + 1, WEIGHTS ))
    pre                         = user( "pretrain%d" % k, k + 1, src, part.sources[k], part.source_valid,
                                        config, part.task, repeat )
    train_users( [ pre ], config.epochs )
    if cache is not None:
        cache[k]                = pre.best.clone()
    return pre.best


def run_repeat( config, part, repeat, mode, system = None, pretrained = None ):
    """
    Train and evaluate one system (a federation mode, or the baseline) on one prepared task and
    repeat.  A diverging repeat yields a failed row rather than an exception, as does one whose
    every federation round was skipped for want of the pool.  Pass the same pretrained dict to
    every mode of a task and repeat, to pretrain its sources only once.
    """
    system                      = system or mode
    started                     = misc.timer()
    task, nf                    = part.task, part.nf
    pool                        = None
    prefix                      = ""
    if mode != 'no' and system != BASELINE:
        pool                    = pool_service.connect( config.pool )
        nonce                   = "run" if isinstance( pool, pool_service.store ) else uuid.uuid4().hex[:8]
        prefix                  = "%s.t%d.r%d.%s." % ( nonce, task, repeat, mode )

    net                         = _create( config, nf, system, misc.derive( config.seed, repeat, task, 0, WEIGHTS ))
    weights_digest              = net.digest()
    target                      = user( prefix + "target", 0, net, part.train, part.valid, config, task, repeat,
                                        mode=mode if pool is not None else 'no', pool=pool, prefix=prefix,
                                        test=part.test )
    sources                     = []
    try:
        if pool is not None:
            for k, windows in enumerate( part.sources ):
                if config.pretrain_sources:
                    src         = _pretrained( config, part, repeat, k, system, pretrained )
                else:
                    src         = _create( config, nf, system, misc.derive( config.seed, repeat, task, k + 1, WEIGHTS ))
                sources.append( user( "%ssource%d" % ( prefix, k ), k + 1, src, windows, part.source_valid,
                                      config, task, repeat, mode=mode, pool=pool, prefix=prefix ))
        for u in [ target ] + sources:
            u.publish()
        learners                = [ target ] + ( sources if config.sources_learn else [] )
        train_users( learners, config.epochs, config.schedule )
        _, test                 = target.best.evaluate( target.test )
        if not misc.finite( test ):
            raise misc.diverged( "diverged: test MSE %r" % test )
    except misc.diverged as exc:
        log.warning( "%s task %d repeat %d failed: %s" % ( system, task, repeat, exc ))
        return outcome( row( system, task, repeat, misc.nan, misc.nan, target.best_epoch, config.epochs, 0,
                             target.pool_failures, net.param_count(), misc.timer() - started, weights_digest,
                             target.data_digest(), str( exc )),
                        [ a for u in [ target ] + sources for a in u.audits ], target.history, target.gates )

    if config.checkpoints and system != BASELINE:
        if not os.path.isdir( config.checkpoints ):
            os.makedirs( config.checkpoints )
        model.save( target.best, os.path.join( config.checkpoints, "%s-task%d-repeat%d.fsck" % ( system, task, repeat )),
                    config )
    rounds                      = sum( 1 for a in target.audits if a.skipped is None )
    error                       = None
    if target.pool_failures:
        log.warning( "%s task %d repeat %d: %d of %d FL rounds skipped; pool unavailable" % (
            system, task, repeat, target.pool_failures, len( target.audits )))
        if target.pool_failures == len( target.audits ):
            error               = "pool unavailable: all %d FL rounds skipped" % target.pool_failures
    log.info( "%s task %d repeat %d: test MSE %.6g (validation %.6g at epoch %d; %d FL rounds)" % (
        system, task, repeat, test, target.best_valid, target.best_epoch, rounds ))
    return outcome( row( system, task, repeat, target.best_valid, test, target.best_epoch, config.epochs,
                         rounds, target.pool_failures, net.param_count(), misc.timer() - started, weights_digest,
                         target.data_digest(), error ),
                    [ a for u in [ target ] + sources for a in u.audits ], target.history, target.gates )


#
# Reports
#
aggregate = collections.namedtuple(
    'Aggregate', [
        'system',
        'task',
        'repeats',              # successful repeats averaged
        'failed',               # failed repeats excluded
        'valid_mse',
        'test_mse',
        'params',
        'rank',                 # 1 is the lowest mean test MSE on the task
        ] )


class report( object ):
    """Per-repeat rows and FL-round audits, aggregated per system and task on demand."""
    def __init__( self, config = None ):
        self.config             = config
        self.rows               = []
        self.audits             = []
        self.pool_failures      = 0     # federation rounds skipped for want of the pool

    def __len__( self ):
        return len( self.rows )

    def add( self, o ):
        r                       = o.row
        self.rows.append( r )
        self.audits.extend( federation.audit_record( a, system=r.system, task=r.task, repeat=r.repeat )
                            for a in o.audits )
        return r

    def failures( self ):
        return sum( 1 for r in self.rows if r.error is not None )

    def systems( self ):
        return list( collections.OrderedDict.fromkeys( r.system for r in self.rows ))

    def aggregate( self ):
        """
        Mean validation and test MSE over each system's successful repeats, per task; systems are
        ranked per task by mean test MSE (ties by name), those without a successful repeat last.
        """
        result                  = []
        for task in sorted( set( r.task for r in self.rows )):
            rows                = []
            for system in self.systems():
                mine            = [ r for r in self.rows if r.task == task and r.system == system ]
                if not mine:
                    continue
                ok              = [ r for r in mine if r.error is None ]
                rows.append( aggregate(
                    system, task, len( ok ), len( mine ) - len( ok ),
                    float( numpy.mean( [ r.valid_mse for r in ok ] )) if ok else misc.nan,
                    float( numpy.mean( [ r.test_mse for r in ok ] )) if ok else misc.nan,
                    mine[0].params, None ))
            ordered             = sorted( rows, key=lambda a: ( 0, a.test_mse, a.system ) if math.isfinite( a.test_mse )
                                                              else ( 1, 0.0, a.system ))
            ranks               = dict( ( a.system, i + 1 ) for i, a in enumerate( ordered ))
            result.extend( a._replace( rank=ranks[a.system] ) for a in rows )
        return result


def _cell( value ):
    if value is None:
        return ''
    if isinstance( value, float ):
        return repr( float( value ))
    return value


def emit_report( rep, directory ):
    """
    Writes <directory>/metrics.csv (a row per system, task and repeat, then a row per system and
    task aggregate; floats exactly, as repr) and <directory>/audit.jsonl (one FL-round audit per
    line).  Returns the paths written.
    """
    if not os.path.isdir( directory ):
        os.makedirs( directory )
    metrics                     = os.path.join( directory, "metrics.csv" )
    audits                      = os.path.join( directory, "audit.jsonl" )
    with open( metrics, 'w', newline='' ) as f:
        writer                  = csv.DictWriter( f, fieldnames=METRICS )
        writer.writeheader()
        for r in rep.rows:
            cells               = dict( r._asdict(), kind='repeat', failed=int( r.error is not None ))
            writer.writerow( dict( ( k, _cell( cells.get( k ))) for k in METRICS ))
        for a in rep.aggregate():
            cells               = dict( a._asdict(), kind='aggregate' )
            writer.writerow( dict( ( k, _cell( cells.get( k ))) for k in METRICS ))
    with open( audits, 'w' ) as f:
        for record in rep.audits:
            f.write( json.dumps( record, sort_keys=True ) + "\n" )
    log.info( "%d rows and %d audits written to %s" % ( len( rep.rows ), len( rep.audits ), directory ))
    return metrics, audits


def read_metrics( path ):
    """The rows of a metrics.csv, as dicts of typed values (None where empty)."""
    result                      = []
    with open( path, 'r', newline='' ) as f:
        for cells in csv.DictReader( f ):
            record              = {}
            for k, v in cells.items():
                if v == '':
                    record[k]   = None
                elif k in FLOATS:
                    record[k]   = float( v )
                elif k in INTEGERS:
                    record[k]   = int( v )
                else:
                    record[k]   = v
            result.append( record )
    return result


def format_aggregates( records ):
    """Lines summarizing aggregate records (dicts or aggregate tuples)."""
    lines                       = [ "%-4s %-8s %7s %6s %16s %16s %4s" % (
        "task", "system", "repeats", "failed", "valid MSE", "test MSE", "rank" ) ]
    for a in records:
        a                       = a._asdict() if hasattr( a, '_asdict' ) else a
        lines.append( "%-4s %-8s %7s %6s %16.8g %16.8g %4s" % (
            a['task'], a['system'], a['repeats'], a['failed'],
            misc.nan if a['valid_mse'] is None else a['valid_mse'],
            misc.nan if a['test_mse'] is None else a['test_mse'], a['rank'] ))
    return lines


#
# Experiments
#
def run_experiment( config, target, source = None, modes = None ):
    """
    Every label task and repeat, under each of the modes (default: config.mode), plus the DNN
    baseline if config.baseline.  All systems of a task and repeat share the prepared data.
    """
    validate( config )
    modes                       = [ config.mode ] if modes is None else list( modes )
    rep                         = report( config )
    for task in tasks( config, count_channels( target, source )):
        for repeat in range( config.repeats ):
            part                = prepare( config, target, source, task, repeat )
            pretrained          = {}
            for mode in modes:
                rep.add( run_repeat( config, part, repeat, mode, pretrained=pretrained ))
            if config.baseline:
                rep.add( run_repeat( config, part, repeat, 'no', system=BASELINE ))
    if rep.failures():
        log.warning( "%d of %d repeats failed, and are excluded from the aggregates" % (
            rep.failures(), len( rep )))
    return rep


def run_ablation_grid( config, target, source = None ):
    """Every mode (no, random, always, hfl) on identical data, orders and initial weights."""
    return run_experiment( config, target, source, modes=federation.MODES )


def dnn_baseline( config, target, source = None ):
    """The DNN baseline alone, under the same protocol (source data plays no part)."""
    return run_experiment( config._replace( baseline=True ), target, source, modes=() )


#
# Command line
#
def _synth( args ):
    spec                        = synth.load_spec( args.spec ) if args.spec else synth.domain_spec()
    if args.source_out:
        target, source          = synth.make_heterogeneous_pair( spec, seed=args.seed )
        sparse_ts.write_csv( source, args.source_out )
    else:
        target                  = synth.gen_domain( spec, seed=args.seed )
    sparse_ts.write_csv( target, args.out )
    return 0


def _pool( args ):
    srv                         = pool_service.serve( args.bind, background=False )
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.server_close()
        log.info( "pool on %s:%d stopped" % srv.server_address[:2] )
    return 0


def _overrides( args ):
    return dict( ( field, getattr( args, field, None ))
                 for field in ( 'w', 'R', 'alpha', 'lr', 'epochs', 'repeats', 'seed', 'label_index', 'mode',
                                'pool', 'joint_grads', 'selection_score', 'normalize', 'pretrain_sources',
                                'schedule', 'sources', 'baseline', 'checkpoints' ))


def _train( args, grid = False ):
    config                      = load_config( args.config, **_overrides( args ))
    target                      = sparse_ts.ingest_csv( args.target )
    source                      = sparse_ts.ingest_csv( args.source ) if args.source else []
    if grid:
        rep                     = run_ablation_grid( config, target, source )
    else:
        rep                     = run_experiment( config, target, source )
    emit_report( rep, args.out )
    for line in format_aggregates( rep.aggregate() ):
        print( line )
    return 0 if not rep.failures() else 1


def _report( args ):
    records                     = [ r for r in read_metrics( args.metrics ) if r['kind'] == 'aggregate' ]
    for line in format_aggregates( records ):
        print( line )
    return 0 if not any( r['failed'] for r in records ) else 1


def _experiment_arguments( parser ):
    parser.add_argument( '--target', required=True, help="target domain CSV (patient_id,time,channel,value)" )
    parser.add_argument( '--source', help="source domain CSV" )
    parser.add_argument( '--config', help="JSON run config; flags override its fields" )
    parser.add_argument( '--out', default="results", help="directory for metrics.csv and audit.jsonl" )
    parser.add_argument( '--mode', choices=federation.MODES )
    parser.add_argument( '--w', type=int )
    parser.add_argument( '--R', type=int )
    parser.add_argument( '--alpha', type=float )
    parser.add_argument( '--lr', type=float )
    parser.add_argument( '--epochs', type=int )
    parser.add_argument( '--repeats', type=int )
    parser.add_argument( '--seed', type=int )
    parser.add_argument( '--label', dest='label_index', type=int, help="the one channel to predict (default: each)" )
    parser.add_argument( '--pool', help="pool endpoint: host:port, file:<dir> (default: $%s)" % pool_service.ENVIRONMENT )
    parser.add_argument( '--joint-grads', action='store_true', default=None )
    parser.add_argument( '--selection-score', choices=federation.SCORERS )
    parser.add_argument( '--normalize', action='store_true', default=None )
    parser.add_argument( '--pretrain-sources', action='store_true', default=None )
    parser.add_argument( '--schedule', choices=SCHEDULES )
    parser.add_argument( '--sources', type=int, help="source users to deal the source patients into" )
    parser.add_argument( '--no-baseline', dest='baseline', action='store_false', default=None )
    parser.add_argument( '--checkpoints', help="directory for save-best checkpoints" )


def main( argv = None ):
    parser                      = argparse.ArgumentParser( prog="fedsparse",
        description="Heterogeneous federated learning for sparse time-series prediction" )
    parser.add_argument( '--version', action='version', version="%(prog)s " + __version__ )
    parser.add_argument( '-v', '--verbose', action='count', default=0 )
    parser.add_argument( '-q', '--quiet', action='count', default=0 )
    commands                    = parser.add_subparsers( dest='command' )
    commands.required           = True

    p                           = commands.add_parser( 'synth', help="generate synthetic domain CSVs" )
    p.add_argument( '--spec', help="JSON domain spec" )
    p.add_argument( '--out', required=True, help="(target) domain CSV" )
    p.add_argument( '--source-out', help="also emit a heterogeneous source domain CSV" )
    p.add_argument( '--seed', type=int, default=0 )
    p.set_defaults( func=_synth )

    p                           = commands.add_parser( 'pool', help="serve a model pool" )
    p.add_argument( '--bind', default=os.environ.get( pool_service.ENVIRONMENT ) or pool_service.DEFAULT_BIND,
                    help="host:port (default: $%s, or %s)" % ( pool_service.ENVIRONMENT, pool_service.DEFAULT_BIND ))
    p.set_defaults( func=_pool )

    p                           = commands.add_parser( 'train', help="run an experiment under one mode" )
    _experiment_arguments( p )
    p.set_defaults( func=_train )

    p                           = commands.add_parser( 'ablate', help="run every mode on identical data" )
    _experiment_arguments( p )
    p.set_defaults( func=lambda args: _train( args, grid=True ))

    p                           = commands.add_parser( 'report', help="summarize an emitted metrics.csv" )
    p.add_argument( 'metrics', help="path to metrics.csv" )
    p.set_defaults( func=_report )

    args                        = parser.parse_args( argv )
    level                       = logging.INFO + 10 * ( args.quiet - args.verbose )
    logging.basicConfig( level=max( logging.DEBUG, min( logging.CRITICAL, level )),
                         format="%(asctime)s %(levelname)-8s %(name)s: %(message)s" )
    try:
        return args.func( args )
    except ( misc.format_error, misc.patients_error, misc.collision_error, ValueError, OSError ) as exc:
        log.error( "%s: %s" % ( args.command, exc ))
        return 2


if __name__ == "__main__":
    sys.exit( main() )
