"""
Implements tests for the federation module.
"""

from __future__ import absolute_import
from __future__ import print_function
from __future__ import division

__author__                      = "Fedsparse developers"
__copyright__                   = "Copyright (c) 2026 Fedsparse developers"
__license__                     = "GNU General Public License, Version 3 (or later)"

import json

import numpy
import pytest

from . import federation
from . import model
from . import nn
from . import pool_service
from . import sparse_ts
from .misc import *

TINY                            = [ ( 4, 'sigmoid' ), ( 1, 'none' ) ]


def constant_head( w, value ):
    """A head predicting value, whatever its input."""
    return nn.mlp( [ ( numpy.zeros( ( 1, w )), [ value ], 'none' ) ] )


def entries( heads, user = "u" ):
    return [ federation.entry( "%s%d" % ( user, k ), 0, 1, h, 0.0 ) for k, h in enumerate( heads ) ]


def brute_force( pool, recent ):
    best, best_key              = None, None
    for e in pool:
        total                   = 0.0
        for row, y in recent:
            out, _              = nn.forward( e.weights, row )
            total              += ( y - out[0] ) ** 2
        k                       = ( str( e.user_id ), e.feature_index )
        if best is None or ( total, k ) < ( best, best_key ):
            best, best_key      = total, k
    return best_key, best


def test_select_head():
    recent                      = [ ( numpy.array( [ 1.0, 2.0, 3.0 ] ), 2.0 ) ] * 4
    pool                        = entries( [ constant_head( 3, 1.0 ), constant_head( 3, 2.0 ) ] )
    best, scores                = federation.select_head( pool, recent )
    assert "u1" == best.user_id
    assert [ ( ( "u0", 0 ), 4.0 ), ( ( "u1", 0 ), 0.0 ) ] == scores

    # Identical entries tie; the lexicographically first key wins, whatever the pool order
    twins                       = [ federation.entry( "b", 1, 1, constant_head( 3, 1.0 ), 0.0 ),
                                    federation.entry( "a", 2, 1, constant_head( 3, 1.0 ), 0.0 ),
                                    federation.entry( "a", 1, 1, constant_head( 3, 1.0 ), 0.0 ) ]
    best, _                     = federation.select_head( twins, recent )
    assert ( "a", 1 ) == federation.key( best )
    best, _                     = federation.select_head( list( reversed( twins )), recent )
    assert ( "a", 1 ) == federation.key( best )

    with pytest.raises( empty_pool ) as excinfo:
        federation.select_head( [], recent )
    assert "empty pool" in str( excinfo.value )


def test_select_head_oracle():
    rng                         = generator( 21 )
    for trial in range( 100 ):
        w                       = int( rng.integers( 1, 4 ))
        heads                   = [ nn.init_weights( w, TINY, seed=rng ) for _ in range( int( rng.integers( 1, 11 ))) ]
        pool                    = [ federation.entry( "user%d" % rng.integers( 3 ), k, 1, h, 0.0 )
                                    for k, h in enumerate( heads ) ]
        if len( pool ) > 1 and rng.uniform() < 0.3:
            pool[-1]            = pool[-1]._replace( weights=pool[0].weights )      # a deliberate tie
        recent                  = [ ( rng.normal( size=w ), float( rng.normal() )) for _ in range( int( rng.integers( 1, 51 ))) ]
        best, scores            = federation.select_head( pool, recent )
        expected_key, expected  = brute_force( pool, recent )
        assert expected_key == federation.key( best )
        assert near( expected, dict( scores )[expected_key], 1.0e-9 ) or abs( expected ) < 1.0e-12


def test_signed_score():
    recent                      = [ ( numpy.zeros( 2 ), 1.0 ), ( numpy.zeros( 2 ), -1.0 ) ]
    head                        = constant_head( 2, 0.0 )
    assert 0.0 == federation.score( head, recent, 'signed' )
    assert 2.0 == federation.score( head, recent, 'squared' )
    with pytest.raises( ValueError ):
        federation.score( head, recent, 'absolute' )


def test_blend_head():
    rng                         = generator( 22 )
    target                      = nn.init_weights( 3, model.HEAD, seed=rng )
    selected                    = nn.init_weights( 3, model.HEAD, seed=rng )
    assert nn.dumps( target ) == nn.dumps( federation.blend_head( target, selected, 0.0 ))
    assert nn.dumps( selected ) == nn.dumps( federation.blend_head( target, selected, 1.0 ))
    blended                     = federation.blend_head( target, selected, 0.2 )
    for b, t, s in zip( blended.layers, target.layers, selected.layers ):
        assert numpy.max( numpy.abs( b.W - ( 0.2 * s.W + 0.8 * t.W ))) < 1.0e-15
        assert numpy.max( numpy.abs( b.b - ( 0.2 * s.b + 0.8 * t.b ))) < 1.0e-15

    blended                     = federation.blend_head( constant_head( 1, 0.0 ), constant_head( 1, 1.0 ), 0.2 )
    assert 0.2 == blended.layers[0].b[0]

    with pytest.raises( incompatible ) as excinfo:
        federation.blend_head( target, constant_head( 3, 1.0 ), 0.2 )
    assert "incompatible head" in str( excinfo.value )
    with pytest.raises( ValueError ):
        federation.blend_head( target, selected, 1.5 )


def trace( losses, patience = 3 ):
    state                       = federation.switch( patience=patience )
    result                      = []
    for l in losses:
        state, active           = federation.update_switch( state, l )
        result.append( ( state.since, active ))
    return result


def test_update_switch():
    assert [ ( 0, False ) ] * 3 == trace( [ 1.0, 0.9, 0.8 ] )
    assert [ ( 0, False ), ( 1, False ), ( 2, False ), ( 3, True ) ] == trace( [ 1.0, 1.1, 1.2, 1.3 ] )
    assert [ ( 0, False ), ( 1, False ), ( 2, False ), ( 0, False ) ] == trace( [ 1.0, 1.1, 1.2, 0.5 ] )
    # Equalling the best is not an improvement
    assert [ ( 0, False ), ( 1, False ), ( 2, False ), ( 3, True ) ] == trace( [ 1.0, 1.0, 1.0, 1.0 ] )
    with pytest.raises( diverged ):
        trace( [ 1.0, nan ] )


def test_update_switch_oracle():
    rng                         = generator( 23 )
    for _ in range( 50 ):
        losses                  = list( rng.integers( 1, 8, size=50 ) / 4.0 )      # plenty of ties
        best, since, expected   = inf, 0, []
        for l in losses:
            if l < best:
                best, since     = l, 0
            else:
                since          += 1
            expected.append( since >= 3 )
        assert expected == [ active for _, active in trace( losses ) ]


def batch_of( nf, w, count, seed ):
    rng                         = generator( seed )
    return [ sparse_ts.window( rng.normal( size=( nf, w )), numpy.zeros( ( nf, w )), numpy.zeros( ( nf, w ), dtype=bool ),
                               float( rng.normal() ), k, float( k )) for k in range( count ) ]


def test_fl_round():
    m                           = model.create( 2, 3, seed=24 )
    batch                       = batch_of( 2, 3, 10, seed=25 )
    recent                      = federation.recent_pairs( batch, 2 )
    others                      = [ federation.entry( "src", i, 1, nn.init_weights( 3, model.HEAD, seed=26 + i ), 0.0 )
                                    for i in range( 3 ) ]
    embedding, prediction       = nn.dumps( m.embedding ), nn.dumps( m.prediction )
    before                      = [ nn.clone( h ) for h in m.heads ]

    a                           = federation.fl_round( m, others, recent, 0.2, epoch=4, batch=1, user_id="tgt" )
    assert None is a.skipped
    assert 2 == len( a.selections )
    for i, s in enumerate( a.selections ):
        expected_key, _         = brute_force( others, recent[i] )
        assert expected_key == ( s.user_id, s.feature_index )
        selected                = others[s.feature_index].weights
        assert nn.dumps( federation.blend_head( before[i], selected, 0.2 )) == nn.dumps( m.heads[i] )
    assert embedding == nn.dumps( m.embedding )
    assert prediction == nn.dumps( m.prediction )
    json.dumps( federation.audit_record( a, system="hfl" ))

    # alpha=0 leaves the model unchanged, whatever is selected
    digest                      = m.digest()
    federation.fl_round( m, others, recent, 0.0 )
    assert digest == m.digest()

    # A pool of exact copies of the model's own heads, which win: a fixed point for any alpha
    own                         = [ federation.entry( "a-self", i, 1, nn.clone( h ), 0.0 ) for i, h in enumerate( m.heads ) ]
    for i in range( 2 ):
        recent[i]               = [ ( row, model.head_forward( m, i, row )) for row, _ in recent[i] ]
    a                           = federation.fl_round( m, own + others, recent, 0.5 )
    assert [ ( "a-self", 0 ), ( "a-self", 1 ) ] == [ ( s.user_id, s.feature_index ) for s in a.selections ]
    assert digest == m.digest()

    a                           = federation.fl_round( m, [], recent, 0.2 )
    assert "empty pool" == a.skipped and [] == a.selections
    assert digest == m.digest()


def test_fl_round_random():
    m                           = model.create( 2, 3, seed=27 )
    recent                      = federation.recent_pairs( batch_of( 2, 3, 5, seed=28 ), 2 )
    single                      = [ federation.entry( "src", 0, 1, nn.init_weights( 3, model.HEAD, seed=29 ), 0.0 ) ]
    a, b                        = m.clone(), m.clone()
    federation.fl_round( a, single, recent, 0.2, mode='random', rng=generator( 1 ))
    federation.fl_round( b, single, recent, 0.2, mode='always' )
    assert a.digest() == b.digest()

    pool                        = [ federation.entry( "src", i, 1, nn.init_weights( 3, model.HEAD, seed=30 + i ), 0.0 )
                                    for i in range( 4 ) ]
    # The pick depends on the pool contents and the generator, not on the order of the pool
    assert federation.select_random( pool, generator( 2 )) == federation.select_random( list( reversed( pool )), generator( 2 ))


def test_stale_snapshot():
    # Federating against a snapshot equals federating against the live pool, while its publishers are silent
    s                           = pool_service.store()
    for k in range( 3 ):
        federation.publish_heads( model.create( 2, 3, seed=31 + k ), "src%d" % k, s, {} )
    snapshot                    = s.fetch()
    recent                      = federation.recent_pairs( batch_of( 2, 3, 6, seed=34 ), 2 )
    a, b                        = model.create( 2, 3, seed=35 ), model.create( 2, 3, seed=35 )
    federation.fl_round( a, snapshot, recent, 0.2 )
    federation.fl_round( b, s.fetch(), recent, 0.2 )
    assert a.digest() == b.digest()


class unreachable( object ):
    def publish( self, e ):
        raise pool_error( "unreachable" )


def test_publish_heads():
    s                           = pool_service.store()
    m                           = model.create( 2, 3, seed=36 )
    digest                      = m.digest()
    versions                    = {}
    assert [ 1, 1 ] == federation.publish_heads( m, "u", s, versions )
    assert [ 2, 2 ] == federation.publish_heads( m, "u", s, versions )
    assert digest == m.digest()
    assert [ 2, 2 ] == [ e.version for e in s.fetch() ]
    with pytest.raises( pool_error ):
        federation.publish_heads( m, "u", unreachable(), {} )
    with pytest.raises( TypeError ):
        federation.publish_heads( m, "u", s )                       # the counters must persist between calls


def test_publisher():
    m                           = model.create( 2, 3, seed=37 )
    p                           = federation.publisher( "u", unreachable() )
    assert None is p.publish( m )
    assert 1 == p.failures and 2 == len( p.pending )
    assert not p.flush()

    # The pool comes back: the retried entries land, and later publishes carry on the versions
    p.pool                      = pool_service.store()
    assert p.flush()
    assert not p.pending
    assert [ 2, 2 ] == p.publish( m )


class refusing( object ):
    def publish( self, e ):
        raise incompatible( "incompatible head" )


def test_publish_refused():
    m                           = model.create( 2, 3, seed=38 )
    versions                    = {}
    assert [ None, None ] == federation.publish_heads( m, "u", refusing(), versions )
    assert { 0: 1, 1: 1 } == versions

    # A refusal is an answer, not a transport failure: nothing is queued for retry
    p                           = federation.publisher( "u", refusing() )
    assert [ None, None ] == p.publish( m )
    assert 0 == p.failures and not p.pending
    assert p.flush()
