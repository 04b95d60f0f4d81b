#!/usr/bin/env python

"""
sparse_ts       -- Sparse, single-observation-per-timestamp multichannel time series

    Each patient's record is an irregular stream of events; at every timestamp exactly one channel
is observed: one of the nf features (channels 0..nf-1) or the label (channel nf).  For every label
observation we pack two nf x w feature tensors:

        dense  -- row i holds the last w observed values of feature i, most-recent-first.
        sparse -- the w grid steps (events of any channel) immediately preceding the label, one
                  column per step, most-recent-first; entry (i,k) holds feature i if the k'th step
                  observed it, else 0.0 (and the accompanying mask is False).

    The "grid" is the union of all the series' observation timestamps: every event occupies one
grid step, no matter how unevenly the raw timestamps are spaced.  Label events are grid steps too,
but never appear in either feature tensor.

    Labels lacking w prior observations of every feature (or w prior grid steps) are skipped rather
than padded, and the remaining windows are numbered contiguously.
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

import bisect
import collections
import csv
import logging
import math
import struct

import numpy

from . import misc

log                             = logging.getLogger( __package__ )

COLUMNS                         = [ 'patient_id', 'time', 'channel', 'value' ]
MAGIC                           = b'FSTS1'


event = collections.namedtuple(
    'Event', [
        'time',
        'channel',
        'value',
        ] )


window = collections.namedtuple(
    'SampleWindow', [
        'dense',                # nf x w float64, most-recent-first
        'sparse',               # nf x w float64, 0.0 where unobserved
        'mask',                 # nf x w bool, True where sparse was observed
        'label',                # y_t
        't_index',              # compacted (contiguous) time index
        'time',                 # raw label timestamp (nan if loaded from a dataset file)
        ] )


dataset = collections.namedtuple(
    'Dataset', [
        'windows',
        'skipped',              # label events lacking history
        ] )


class series( object ):
    """
    One patient's irregular event stream.  The events are validated on construction: timestamps
    must strictly increase (which also guarantees one observation per timestamp), and channels must
    lie in [0,nf] (if nf is known).  Instances are never modified after construction, so they may
    be shared freely between threads.
    """
    __slots__                   = [ 'patient_id', 'events', 'times' ]

    def __init__( self, patient_id, events, nf = None ):
        self.patient_id         = patient_id
        self.events             = tuple( event( float( t ), int( c ), float( v ))
                                         for t, c, v in events )
        self.times              = [ e.time for e in self.events ]
        for prev, e in zip( self.events, self.events[1:] ):
            if not e.time > prev.time:
                if e.time == prev.time:
                    raise misc.collision_error( "timestamp collision: patient %s at time %r" % (
                        patient_id, e.time ))
                raise ValueError( "patient %s: timestamps must strictly increase; %r follows %r" % (
                    patient_id, e.time, prev.time ))
        for e in self.events:
            if e.channel < 0 or ( nf is not None and e.channel > nf ):
                raise ValueError( "patient %s: channel %d at time %r outside [0,%s]" % (
                    patient_id, e.channel, e.time, nf ))

    def __len__( self ):
        return len( self.events )

    def __repr__( self ):
        return "<series %s: %d events>" % ( self.patient_id, len( self.events ))

    def before( self, label_time ):
        """Number of events (grid steps) strictly before label_time."""
        return bisect.bisect_left( self.times, label_time )


def _check_w( w ):
    if w < 1:
        raise ValueError( "window size w must be >= 1, not %r" % ( w, ))


def compact_labels( s, nf ):
    """
    The ordered raw timestamps at which the label (channel nf) is observed; the k'th entry has
    compacted time index k.
    """
    return [ e.time for e in s.events if e.channel == nf ]


def pack_sparse( s, label_time, w, nf ):
    """
    Pack the nf x w sparse feature tensor X^S (and its observation mask) from the w grid steps
    immediately preceding label_time, most-recent-first.
    """
    _check_w( w )
    n                           = s.before( label_time )
    if n < w:
        raise misc.history_error( "insufficient history: %d grid steps before time %r, need %d" % (
            n, label_time, w ))
    sparse                      = numpy.zeros( ( nf, w ), dtype=numpy.float64 )
    mask                        = numpy.zeros( ( nf, w ), dtype=bool )
    for k in range( w ):
        e                       = s.events[n-1-k]
        if e.channel < nf:
            sparse[e.channel,k] = e.value
            mask[e.channel,k]   = True
    return sparse, mask


def pack_dense( s, label_time, w, nf ):
    """
    Pack the nf x w dense feature tensor X^D: row i is the last w observed values of feature i
    before label_time, most-recent-first.
    """
    _check_w( w )
    rows                        = [ [] for _ in range( nf ) ]
    wanting                     = nf
    for e in reversed( s.events[:s.before( label_time )] ):
        if e.channel < nf and len( rows[e.channel] ) < w:
            rows[e.channel].append( e.value )
            if len( rows[e.channel] ) == w:
                wanting        -= 1
                if not wanting:
                    break
    for i, row in enumerate( rows ):
        if len( row ) < w:
            raise misc.history_error( "insufficient history: feature %d has %d observations before time %r, need %d" % (
                i, len( row ), label_time, w ))
    return numpy.array( rows, dtype=numpy.float64 ).reshape( nf, w )


def build_dataset( s, nf, w ):
    """
    One SampleWindow per label observation satisfying both packing preconditions, numbered
    contiguously in time order.  Performs a single forward pass, remembering the last w grid steps
    and the last w values of each feature; infeasible labels are counted in .skipped.
    """
    _check_w( w )
    if nf < 1:
        raise ValueError( "at least one feature is required, not nf=%r" % ( nf, ))
    steps                       = collections.deque( maxlen=w )
    recent                      = [ collections.deque( maxlen=w ) for _ in range( nf ) ]
    windows                     = []
    skipped                     = 0
    for e in s.events:
        if e.channel > nf:
            raise ValueError( "patient %s: channel %d at time %r outside [0,%d]" % (
                s.patient_id, e.channel, e.time, nf ))
        if e.channel == nf:
            if len( steps ) == w and all( len( r ) == w for r in recent ):
                dense           = numpy.array( [ list( reversed( r )) for r in recent ], dtype=numpy.float64 )
                sparse          = numpy.zeros( ( nf, w ), dtype=numpy.float64 )
                mask            = numpy.zeros( ( nf, w ), dtype=bool )
                for k, step in enumerate( reversed( steps )):
                    if step.channel < nf:
                        sparse[step.channel,k] = step.value
                        mask[step.channel,k]   = True
                windows.append( window( dense, sparse, mask, e.value, len( windows ), e.time ))
            else:
                skipped        += 1
        else:
            recent[e.channel].append( e.value )
        steps.append( e )
    if skipped:
        log.debug( "patient %s: %d of %d labels skipped for insufficient history" % (
            s.patient_id, skipped, skipped + len( windows )))
    return dataset( windows, skipped )


def select_label( s, label_index, channels ):
    """
    Remap a raw series of 'channels' channels so that channel 'label_index' becomes the label
    (channel channels-1), and the remaining channels become features 0.. in ascending order.  Each
    channel may thus take its turn as the label, predicted from all the others.
    """
    if not 0 <= label_index < channels:
        raise ValueError( "label index %r outside [0,%d)" % ( label_index, channels ))
    nf                          = channels - 1
    remap                       = {}
    for c in range( channels ):
        if c == label_index:
            remap[c]            = nf
        else:
            remap[c]            = c if c < label_index else c - 1
    return series( s.patient_id, [ ( e.time, remap[e.channel], e.value ) for e in s.events ], nf=nf )


def split_patients( datasets, ratios = ( 0.6, 0.2, 0.2 ), seed = 0 ):
    """
    Partition per-patient datasets into (train, valid, test), by patient.  The validation and test
    counts are floor( n * ratio ) (at least one each); the remainder goes to training.
    Deterministic for a given seed.
    """
    n                           = len( datasets )
    if n < 3:
        raise misc.patients_error( "too few patients: %d; at least 3 required" % n )
    if len( ratios ) != 3 or abs( sum( ratios ) - 1.0 ) > 1.0e-9 or min( ratios ) < 0:
        raise ValueError( "split ratios must be 3 non-negative fractions summing to 1: %r" % ( ratios, ))
    n_valid                     = max( 1, int( math.floor( n * ratios[1] + 1.0e-9 )))
    n_test                      = max( 1, int( math.floor( n * ratios[2] + 1.0e-9 )))
    n_train                     = n - n_valid - n_test
    order                       = misc.generator( seed ).permutation( n )
    train                       = [ datasets[i] for i in order[:n_train] ]
    valid                       = [ datasets[i] for i in order[n_train:n_train+n_valid] ]
    test                        = [ datasets[i] for i in order[n_train+n_valid:] ]
    return train, valid, test


#
# CSV ingestion and emission
#
#     patient_id,time,channel,value
#
# Rows need not be sorted; they are grouped by patient (in order of first appearance) and sorted
# by time.
#
def ingest_csv( path ):
    groups                      = collections.OrderedDict()
    with open( path, 'r', newline='' ) as f:
        reader                  = csv.reader( f )
        header                  = next( reader, None )
        if header is None:
            return []
        if [ h.strip() for h in header ] != COLUMNS:
            raise misc.format_error( "line 1: expected header %s, found %s" % (
                ','.join( COLUMNS ), ','.join( header )))
        for row in reader:
            line                = reader.line_num
            if not row or not any( c.strip() for c in row ):
                continue
            if len( row ) != len( COLUMNS ):
                raise misc.format_error( "line %d: expected %d columns, found %d" % (
                    line, len( COLUMNS ), len( row )))
            try:
                pid             = row[0].strip()
                t               = float( row[1] )
                c               = int( row[2] )
                v               = float( row[3] )
            except ValueError as exc:
                raise misc.format_error( "line %d: %s" % ( line, exc ))
            if not pid or c < 0 or not misc.finite( t, v ):
                raise misc.format_error( "line %d: invalid row %r" % ( line, row ))
            groups.setdefault( pid, [] ).append( ( t, c, v, line ))
    result                      = []
    for pid, rows in groups.items():
        rows.sort( key=lambda r: r[0] )
        for prev, r in zip( rows, rows[1:] ):
            if prev[0] == r[0]:
                raise misc.collision_error( "timestamp collision: patient %s at time %r (lines %d and %d)" % (
                    pid, r[0], prev[3], r[3] ))
        result.append( series( pid, [ r[:3] for r in rows ] ))
    log.info( "%s: %d patients, %d events" % (
        path, len( result ), sum( len( s ) for s in result )))
    return result


def write_csv( series_list, path ):
    """Emit series in the schema ingest_csv reads; values are written exactly (repr)."""
    with open( path, 'w', newline='' ) as f:
        writer                  = csv.writer( f )
        writer.writerow( COLUMNS )
        for s in series_list:
            for e in s.events:
                writer.writerow( [ s.patient_id, repr( e.time ), e.channel, repr( e.value ) ] )


#
# FSTS1 dataset files
#
#     All little-endian.  'FSTS1', then uint32 nf, w, window count; then per window: nf*w float64
# dense, nf*w float64 sparse, nf*w uint8 mask, float64 label, int64 t_index.  Matrices are
# row-major.
#
def save_dataset( windows, nf, w, path ):
    with open( path, 'wb' ) as f:
        f.write( MAGIC )
        f.write( struct.pack( '<III', nf, w, len( windows )))
        for win in windows:
            f.write( numpy.asarray( win.dense, dtype='<f8' ).tobytes() )
            f.write( numpy.asarray( win.sparse, dtype='<f8' ).tobytes() )
            f.write( numpy.asarray( win.mask, dtype='u1' ).tobytes() )
            f.write( struct.pack( '<dq', win.label, win.t_index ))


def load_dataset( path ):
    """Returns ( nf, w, windows )."""
    with open( path, 'rb' ) as f:
        blob                    = f.read()
    if blob[:len( MAGIC )] != MAGIC:
        raise misc.format_error( "%s: not an FSTS1 dataset" % path )
    offset                      = len( MAGIC )
    try:
        nf, w, count            = struct.unpack_from( '<III', blob, offset )
        offset                 += 12
        cells                   = nf * w
        windows                 = []
        for _ in range( count ):
            dense               = numpy.frombuffer( blob, dtype='<f8', count=cells, offset=offset )
            offset             += 8 * cells
            sparse              = numpy.frombuffer( blob, dtype='<f8', count=cells, offset=offset )
            offset             += 8 * cells
            mask                = numpy.frombuffer( blob, dtype='u1', count=cells, offset=offset )
            offset             += cells
            label, t_index      = struct.unpack_from( '<dq', blob, offset )
            offset             += 16
            windows.append( window( dense.astype( numpy.float64 ).reshape( nf, w ),
                                    sparse.astype( numpy.float64 ).reshape( nf, w ),
                                    mask.astype( bool ).reshape( nf, w ),
                                    label, t_index, misc.nan ))
    except ( struct.error, ValueError ) as exc:
        raise misc.format_error( "%s: truncated FSTS1 dataset: %s" % ( path, exc ))
    if offset != len( blob ):
        raise misc.format_error( "%s: %d trailing bytes after %d windows" % ( path, len( blob ) - offset, count ))
    return nf, w, windows


class normalizer( object ):
    """
    Optional per-feature z-scoring, fitted on (training) windows' dense values.  Applied to dense
    entries and to observed sparse entries; unobserved sparse entries stay 0.0, and labels remain
    in raw units.
    """
    def __init__( self, windows ):
        if not windows:
            raise ValueError( "cannot fit a normalizer on no windows" )
        values                  = numpy.stack( [ win.dense for win in windows ] )     # N x nf x w
        self.mean               = values.mean( axis=( 0, 2 ))
        self.std                = values.std( axis=( 0, 2 ))
        self.std[self.std == 0] = 1.0

    def apply( self, win ):
        mu                      = self.mean[:,None]
        sd                      = self.std[:,None]
        dense                   = ( win.dense - mu ) / sd
        sparse                  = numpy.where( win.mask, ( win.sparse - mu ) / sd, 0.0 )
        return win._replace( dense=dense, sparse=sparse )

    def __call__( self, windows ):
        return [ self.apply( win ) for win in windows ]
