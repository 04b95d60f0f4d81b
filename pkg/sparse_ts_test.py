"""
Implements tests for the sparse_ts module.
"""

from __future__ import absolute_import
from __future__ import print_function
from __future__ import division

__author__                      = "Fedsparse developers"
__copyright__                   = "Copyright (c) 2026 Fedsparse developers"
__license__                     = "GNU General Public License, Version 3 (or later)"

import numpy
import pytest

from . import sparse_ts
from .misc import *


def random_series( rng, nf, events ):
    times                       = numpy.cumsum( rng.uniform( 0.1, 2.0, size=events ))
    channels                    = rng.integers( nf + 1, size=events )
    values                      = rng.normal( size=events )
    return sparse_ts.series( "p", zip( times, channels, values ), nf=nf )


def oracle( s, nf, w ):
    """Brute force: re-scan the raw events backwards from every label observation."""
    windows, skipped            = [], 0
    for j, e in enumerate( s.events ):
        if e.channel != nf:
            continue
        steps                   = s.events[:j]
        observed                = [ [ x.value for x in steps if x.channel == i ] for i in range( nf ) ]
        if len( steps ) < w or any( len( o ) < w for o in observed ):
            skipped            += 1
            continue
        dense                   = numpy.array( [ list( reversed( o[-w:] )) for o in observed ] )
        sparse                  = numpy.zeros( ( nf, w ))
        mask                    = numpy.zeros( ( nf, w ), dtype=bool )
        for k in range( w ):
            x                   = steps[-1-k]
            if x.channel < nf:
                sparse[x.channel,k] = x.value
                mask[x.channel,k]   = True
        windows.append( ( dense, sparse, mask, e.value, e.time ))
    return windows, skipped


def test_series_invariants():
    with pytest.raises( collision_error ):
        sparse_ts.series( "p", [ ( 1, 0, 1.0 ), ( 1, 1, 2.0 ) ] )
    with pytest.raises( ValueError ):
        sparse_ts.series( "p", [ ( 2, 0, 1.0 ), ( 1, 1, 2.0 ) ] )
    with pytest.raises( ValueError ):
        sparse_ts.series( "p", [ ( 1, 3, 1.0 ) ], nf=2 )
    s                           = sparse_ts.series( "p", [ ( 1, 0, 1.0 ), ( 4, 1, 2.0 ) ], nf=1 )
    assert 2 == len( s )
    assert 1 == s.before( 4 )


def test_compact_labels():
    assert [] == sparse_ts.compact_labels( sparse_ts.series( "p", [ ( 1, 0, 1.0 ) ] ), 1 )
    s                           = sparse_ts.series( "p", [ ( 1, 0, 1.0 ), ( 4, 1, .5 ), ( 6, 0, 2.0 ),
                                                          ( 9, 1, .6 ), ( 12, 1, .7 ) ] )
    assert [ 4.0, 9.0, 12.0 ] == sparse_ts.compact_labels( s, 1 )
    s                           = sparse_ts.series( "p", [ ( t, 1, float( t )) for t in range( 1, 6 ) ] )
    assert [ 1, 2, 3, 4, 5 ] == sparse_ts.compact_labels( s, 1 )


def test_pack_sparse():
    s                           = sparse_ts.series( "p", [ ( 1, 0, 3.0 ), ( 2, 0, 5.0 ), ( 3, 0, 7.0 ), ( 4, 1, 0.0 ) ] )
    sparse, mask                = sparse_ts.pack_sparse( s, 4, 3, 1 )
    assert [ [ 7.0, 5.0, 3.0 ] ] == sparse.tolist()
    assert mask.all()

    s                           = sparse_ts.series( "p", [ ( 1, 2, 1.0 ), ( 2, 0, 9.0 ), ( 3, 2, 4.0 ) ] )
    sparse, mask                = sparse_ts.pack_sparse( s, 3, 2, 2 )
    assert [ [ 9.0, 0.0 ], [ 0.0, 0.0 ] ] == sparse.tolist()
    assert [ [ True, False ], [ False, False ] ] == mask.tolist()

    s                           = sparse_ts.series( "p", [ ( 1, 1, 1.0 ), ( 2, 1, 2.0 ) ] )
    sparse, mask                = sparse_ts.pack_sparse( s, 2, 1, 1 )
    assert [ [ 0.0 ] ] == sparse.tolist()
    assert not mask.any()

    with pytest.raises( history_error ):
        sparse_ts.pack_sparse( s, 2, 2, 1 )


def test_pack_dense():
    s                           = sparse_ts.series( "p", [ ( 1, 0, 5.0 ), ( 3, 0, 7.0 ), ( 6, 0, 9.0 ), ( 7, 1, 0.5 ) ] )
    assert [ [ 9.0, 7.0, 5.0 ] ] == sparse_ts.pack_dense( s, 7, 3, 1 ).tolist()
    s                           = sparse_ts.series( "p", [ ( 1, 0, 2.5 ), ( 2, 1, 0.5 ) ] )
    assert [ [ 2.5 ] ] == sparse_ts.pack_dense( s, 2, 1, 1 ).tolist()
    s                           = sparse_ts.series( "p", [ ( 1, 0, 5.0 ), ( 3, 0, 7.0 ), ( 7, 1, 0.5 ) ] )
    with pytest.raises( history_error ) as excinfo:
        sparse_ts.pack_dense( s, 7, 3, 1 )
    assert "insufficient history" in str( excinfo.value )


def test_build_dataset():
    s                           = sparse_ts.series( "p", [ ( 1, 0, 1.0 ), ( 2, 0, 2.0 ), ( 3, 1, 10.0 ),
                                                          ( 4, 0, 3.0 ), ( 5, 1, 20.0 ), ( 6, 1, 30.0 ) ] )
    ds                          = sparse_ts.build_dataset( s, 1, 2 )
    assert 0 == ds.skipped
    assert [ 0, 1, 2 ] == [ win.t_index for win in ds.windows ]
    assert [ 10.0, 20.0, 30.0 ] == [ win.label for win in ds.windows ]
    assert [ [ 3.0, 2.0 ] ] == ds.windows[2].dense.tolist()
    assert [ [ 0.0, 3.0 ] ] == ds.windows[2].sparse.tolist()    # the most recent step was a label

    # The first label lacks history; the rest are re-indexed from 0, and otherwise unchanged
    s                           = sparse_ts.series( "p", [ ( 0, 1, 5.0 ) ] + list( ( e.time, e.channel, e.value ) for e in s.events ))
    again                       = sparse_ts.build_dataset( s, 1, 2 )
    assert 1 == again.skipped
    assert [ 0, 1, 2 ] == [ win.t_index for win in again.windows ]
    for a, b in zip( ds.windows, again.windows ):
        assert numpy.array_equal( a.dense, b.dense ) and numpy.array_equal( a.sparse, b.sparse )

    assert [] == sparse_ts.build_dataset( sparse_ts.series( "p", [] ), 2, 3 ).windows


def test_build_dataset_oracle():
    rng                         = generator( 2024 )
    for trial in range( 1000 ):
        nf                      = int( rng.integers( 1, 5 ))
        w                       = int( rng.integers( 1, 4 ))
        s                       = random_series( rng, nf, int( rng.integers( 0, 201 )))
        ds                      = sparse_ts.build_dataset( s, nf, w )
        expected, skipped       = oracle( s, nf, w )
        assert skipped == ds.skipped
        assert len( expected ) == len( ds.windows )
        for k, ( win, ( dense, sparse, mask, label, time )) in enumerate( zip( ds.windows, expected )):
            assert k == win.t_index
            assert ( nf, w ) == win.dense.shape == win.sparse.shape == win.mask.shape
            assert numpy.array_equal( dense, win.dense )
            assert numpy.array_equal( sparse, win.sparse )
            assert numpy.array_equal( mask, win.mask )
            assert not win.sparse[~win.mask].any()
            assert label == win.label and time == win.time
            # The standalone packers agree with the single-pass builder
            assert numpy.array_equal( sparse_ts.pack_dense( s, time, w, nf ), win.dense )
            assert numpy.array_equal( sparse_ts.pack_sparse( s, time, w, nf )[0], win.sparse )


def test_select_label():
    s                           = sparse_ts.series( "p", [ ( 1, 0, 10.0 ), ( 2, 1, 11.0 ), ( 3, 2, 12.0 ) ] )
    relabelled                  = sparse_ts.select_label( s, 0, 3 )
    assert [ 2, 0, 1 ] == [ e.channel for e in relabelled.events ]
    assert [ 10.0, 11.0, 12.0 ] == [ e.value for e in relabelled.events ]
    assert [ 0, 1, 2 ] == [ e.channel for e in sparse_ts.select_label( s, 2, 3 ).events ]
    with pytest.raises( ValueError ):
        sparse_ts.select_label( s, 3, 3 )


def test_split_patients():
    patients                    = [ [ i ] for i in range( 10 ) ]
    train, valid, test          = sparse_ts.split_patients( patients, seed=0 )
    assert ( 6, 2, 2 ) == ( len( train ), len( valid ), len( test ))
    assert sorted( train + valid + test ) == patients
    assert ( train, valid, test ) == sparse_ts.split_patients( patients, seed=0 )

    train, valid, test          = sparse_ts.split_patients( patients[:5], seed=3 )
    assert ( 3, 1, 1 ) == ( len( train ), len( valid ), len( test ))

    with pytest.raises( patients_error ):
        sparse_ts.split_patients( patients[:2] )


def test_ingest_csv( tmp_path ):
    path                        = tmp_path / "events.csv"
    path.write_text( "patient_id,time,channel,value\n" )
    assert [] == sparse_ts.ingest_csv( str( path ))

    path.write_text( "patient_id,time,channel,value\n"
                     "a,3,0,1.5\n"
                     "b,1,1,2.0\n"
                     "a,1,1,0.5\n"
                     "a,2,0,7.25\n" )
    result                      = sparse_ts.ingest_csv( str( path ))
    assert [ "a", "b" ] == [ s.patient_id for s in result ]
    assert [ 1.0, 2.0, 3.0 ] == [ e.time for e in result[0].events ]
    assert [ 0.5, 7.25, 1.5 ] == [ e.value for e in result[0].events ]

    path.write_text( "patient_id,time,channel,value\n"
                     "a,1,0,1.0\n"
                     "a,1,1,2.0\n" )
    with pytest.raises( collision_error ):
        sparse_ts.ingest_csv( str( path ))

    path.write_text( "patient_id,time,channel,value\n"
                     "a,1,0,1.0\n"
                     "a,two,1,2.0\n" )
    with pytest.raises( format_error ) as excinfo:
        sparse_ts.ingest_csv( str( path ))
    assert "line 3" in str( excinfo.value )


def test_write_csv( tmp_path ):
    series                      = [ random_series( generator( 5 ), 2, 30 ) ]
    path                        = str( tmp_path / "out.csv" )
    sparse_ts.write_csv( series, path )
    again,                      = sparse_ts.ingest_csv( path )
    assert series[0].events == again.events


def test_dataset_file( tmp_path ):
    ds                          = sparse_ts.build_dataset( random_series( generator( 9 ), 3, 150 ), 3, 2 )
    assert ds.windows
    path                        = str( tmp_path / "windows.fsts" )
    sparse_ts.save_dataset( ds.windows, 3, 2, path )
    nf, w, windows              = sparse_ts.load_dataset( path )
    assert ( 3, 2, len( ds.windows )) == ( nf, w, len( windows ))
    for a, b in zip( ds.windows, windows ):
        assert numpy.array_equal( a.dense, b.dense )
        assert numpy.array_equal( a.sparse, b.sparse )
        assert numpy.array_equal( a.mask, b.mask )
        assert ( a.label, a.t_index ) == ( b.label, b.t_index )

    with open( path, 'rb' ) as f:
        blob                    = f.read()
    with open( path, 'wb' ) as f:
        f.write( blob[:-3] )
    with pytest.raises( format_error ):
        sparse_ts.load_dataset( path )


def test_normalizer():
    ds                          = sparse_ts.build_dataset( random_series( generator( 11 ), 2, 200 ), 2, 3 )
    norm                        = sparse_ts.normalizer( ds.windows )
    normalized                  = norm( ds.windows )
    values                      = numpy.stack( [ win.dense for win in normalized ] )
    assert numpy.allclose( values.mean( axis=( 0, 2 )), 0.0 )
    assert numpy.allclose( values.std( axis=( 0, 2 )), 1.0 )
    for raw, win in zip( ds.windows, normalized ):
        assert raw.label == win.label
        assert not win.sparse[~win.mask].any()
