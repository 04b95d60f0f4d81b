#!/usr/bin/env python

"""
pool_service    -- The model pool: latest versioned head weights per ( user, feature )

    A store holds, for each ( user_id, feature_index ) key, the latest published pool entry.  A
publish is accepted only if its version exceeds the stored one (versions are assigned by the
publishing clients); a fetch returns a snapshot of the latest entries, optionally excluding one
user's own, and optionally only those whose user_id starts with a prefix.  Silent users simply
leave their last version in the pool.

    A user_id's scope is everything before its last '.' ("" if it has none).  Users of one
scope (eg. one experiment run) must publish heads of one canonical shape: the shape of the
first head accepted in that scope.  Runs of differing window sizes may thus share one pool.

    Three interchangeable pools, all offering .publish( entry ) and
.fetch( exclude_user=None, prefix=None ):

        store           -- in-process, thread-safe
        client          -- talks to a 'server' (wrapping a store) over TCP
        file_pool       -- one file per key in a directory, atomically replaced on publish

WIRE PROTOCOL

    Length-prefixed frames over a stream socket: a 4-byte big-endian payload length, then the
payload, a UTF-8 JSON document (max 16 MiB).  Requests:

        { "op": "publish", "user_id", "feature_index", "version", "published_at",
          "weights": <base64 FSNN1 blob> }
        { "op": "fetch", "exclude_user": <user_id or null>, "prefix": <string or null> }

    Responses: { "ok": true|false, "reason"?, "detail"?, "version"?, "entries"? }; a stale
publish responds { "ok": false, "reason": "stale", "version": <stored> }, a head of the wrong
shape { "ok": false, "reason": "incompatible", "detail": ... }, and a fetch whose response would
exceed the frame limit { "ok": false, "reason": "too large", "detail": ... }.  Any number of
requests may be sent on one connection.
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

import base64
import binascii
import json
import logging
import os
import socket
import socketserver
import struct
import tempfile
import threading

from . import federation
from . import misc
from . import nn

log                             = logging.getLogger( __package__ )

HEADER                          = struct.Struct( '>I' )
MAX_FRAME                       = 16 * 1024 * 1024
SUFFIX                          = '.pool'
ENVIRONMENT                     = 'FEDSPARSE_POOL'
DEFAULT_BIND                    = '127.0.0.1:7470'


#
# Entry <-> JSON document
#
def encode_entry( e ):
    return {
        'user_id':              e.user_id,
        'feature_index':        int( e.feature_index ),
        'version':              int( e.version ),
        'published_at':         e.published_at,
        'weights':              base64.b64encode( nn.dumps( e.weights )).decode( 'ascii' ),
    }


def decode_entry( doc ):
    try:
        blob                    = base64.b64decode( doc['weights'], validate=True )
        e                       = federation.entry( doc['user_id'], int( doc['feature_index'] ), int( doc['version'] ),
                                                    nn.loads( blob ), doc.get( 'published_at' ))
    except ( KeyError, TypeError, ValueError, binascii.Error ) as exc:
        raise misc.protocol_error( "malformed pool entry: %s" % exc )
    if e.version < 1 or e.feature_index < 0:
        raise misc.protocol_error( "malformed pool entry: version %d, feature %d" % ( e.version, e.feature_index ))
    return e


#
# Frames
#
def send_frame( sock, doc ):
    payload                     = json.dumps( doc ).encode( 'utf-8' )
    if len( payload ) > MAX_FRAME:
        raise misc.protocol_error( "frame of %d bytes too large; max %d" % ( len( payload ), MAX_FRAME ))
    sock.sendall( HEADER.pack( len( payload )) + payload )


def recv_exactly( sock, length ):
    """Exactly length bytes, or None on a clean EOF before the first byte; EOFError if torn."""
    data                        = bytearray()
    while len( data ) < length:
        packet                  = sock.recv( length - len( data ))
        if not packet:
            if not data:
                return None
            raise EOFError( "connection closed after %d of %d bytes" % ( len( data ), length ))
        data.extend( packet )
    return bytes( data )


def recv_frame( sock ):
    """The next JSON document (a dict), or None if the peer closed cleanly between frames."""
    header                      = recv_exactly( sock, HEADER.size )
    if header is None:
        return None
    length,                     = HEADER.unpack( header )
    if length > MAX_FRAME:
        raise misc.protocol_error( "frame of %d bytes too large; max %d" % ( length, MAX_FRAME ))
    payload                     = recv_exactly( sock, length ) if length else b''
    if payload is None:
        raise EOFError( "connection closed before a %d byte payload" % length )
    try:
        doc                     = json.loads( payload.decode( 'utf-8' ))
    except ( UnicodeDecodeError, ValueError ) as exc:
        raise misc.protocol_error( "malformed frame payload: %s" % exc )
    if not isinstance( doc, dict ):
        raise misc.protocol_error( "frame payload must be a JSON object" )
    return doc


def scope( user_id ):
    """The run a user belongs to: its user_id up to the last '.'."""
    return str( user_id ).rpartition( '.' )[0]


def _selected( e, exclude_user, prefix ):
    if exclude_user is not None and str( e.user_id ) == str( exclude_user ):
        return False
    return not prefix or str( e.user_id ).startswith( prefix )


class store( object ):
    """
    The latest entry per ( user_id, feature_index ).  Every mutation and snapshot holds the lock
    only long enough to touch the dict, so a fetch never waits on a publisher's I/O.  The
    canonical head shape is fixed at construction for every scope, or else per scope by its
    first accepted entry.
    """
    def __init__( self, shape = None ):
        self.lock               = threading.Lock()
        self.entries            = {}
        self.shape              = shape
        self.shapes             = {}

    def __len__( self ):
        with self.lock:
            return len( self.entries )

    def __repr__( self ):
        return "<store of %d heads>" % len( self )

    def handle_publish( self, e ):
        """Returns ( accepted, stored version ).  Raises misc.incompatible for a non-canonical head."""
        shape                   = e.weights.shape()
        k                       = federation.key( e )
        with self.lock:
            canonical           = self.shape
            if canonical is None:
                canonical       = self.shapes.setdefault( scope( e.user_id ), shape )
            if shape != canonical:
                raise misc.incompatible( "incompatible head: %s/%d shape %s; pool holds %s" % (
                    e.user_id, e.feature_index, shape, canonical ))
            current             = self.entries.get( k )
            if current is not None and e.version <= current.version:
                return False, current.version
            self.entries[k]     = e
        return True, e.version

    def handle_fetch( self, exclude_user = None, prefix = None ):
        with self.lock:
            snapshot            = list( self.entries.values() )
        return sorted( ( e for e in snapshot if _selected( e, exclude_user, prefix )),
                       key=federation.key )

    publish                     = handle_publish
    fetch                       = handle_fetch


def respond( s, doc ):
    """Handle one request document against store s, returning the response document."""
    op                          = doc.get( 'op' )
    if op == 'publish':
        try:
            e                   = decode_entry( doc )
            accepted, version   = s.handle_publish( e )
        except misc.protocol_error as exc:
            return { 'ok': False, 'reason': 'malformed', 'detail': str( exc ) }
        except misc.incompatible as exc:
            return { 'ok': False, 'reason': 'incompatible', 'detail': str( exc ) }
        if not accepted:
            return { 'ok': False, 'reason': 'stale', 'version': version }
        return { 'ok': True, 'version': version }
    if op == 'fetch':
        entries                 = s.handle_fetch( doc.get( 'exclude_user' ), doc.get( 'prefix' ))
        return { 'ok': True, 'entries': [ encode_entry( e ) for e in entries ] }
    return { 'ok': False, 'reason': "unknown op %r" % ( op, ) }


class handler( socketserver.BaseRequestHandler ):
    """Serves requests on one connection until the peer closes, tears a frame, or errs."""
    def handle( self ):
        peer                    = self.client_address
        while True:
            try:
                doc             = recv_frame( self.request )
            except misc.protocol_error as exc:
                log.warning( "pool client %s: %s; dropping connection" % ( peer, exc ))
                try:
                    send_frame( self.request, { 'ok': False, 'reason': str( exc ) } )
                except OSError:
                    pass
                break
            except ( EOFError, OSError ) as exc:
                log.info( "pool client %s: %s" % ( peer, exc ))
                break
            if doc is None:
                break
            response            = respond( self.server.store, doc )
            try:
                try:
                    send_frame( self.request, response )
                except misc.protocol_error as exc:
                    log.warning( "pool client %s: %s request: %s" % ( peer, doc.get( 'op' ), exc ))
                    send_frame( self.request, { 'ok': False, 'reason': 'too large', 'detail': str( exc ) } )
            except OSError as exc:
                log.info( "pool client %s: %s" % ( peer, exc ))
                break


class server( socketserver.ThreadingMixIn, socketserver.TCPServer ):
    """A thread per connection, all sharing one store."""
    daemon_threads              = True
    allow_reuse_address         = True

    def __init__( self, address, s = None ):
        self.store              = s if s is not None else store()
        socketserver.TCPServer.__init__( self, address, handler )


def parse_address( address ):
    """'host:port' (or a ( host, port ) tuple) to ( host, port )."""
    if isinstance( address, tuple ):
        return address
    host, _, port               = str( address ).rpartition( ':' )
    try:
        return ( host or '127.0.0.1', int( port ))
    except ValueError:
        raise ValueError( "pool address %r is not host:port" % ( address, ))


def serve( address, s = None, background = True ):
    """
    Bind a pool server (bind failures raise OSError) and, if background, serve it from a daemon
    thread.  Returns the server; .server_address is the bound address, .shutdown() stops it.
    """
    srv                         = server( parse_address( address ), s )
    log.info( "pool serving on %s:%d" % srv.server_address[:2] )
    if background:
        thread                  = threading.Thread( target=srv.serve_forever, name="pool-server" )
        thread.daemon           = True
        thread.start()
    return srv


class client( object ):
    """A pool on a remote server; each call is one blocking request on a fresh connection."""
    def __init__( self, address, timeout = 10.0 ):
        self.address            = parse_address( address )
        self.timeout            = timeout

    def __repr__( self ):
        return "<client of pool %s:%d>" % self.address

    def _call( self, doc ):
        try:
            sock                = socket.create_connection( self.address, timeout=self.timeout )
            try:
                send_frame( sock, doc )
                response        = recv_frame( sock )
            finally:
                sock.close()
        except ( OSError, EOFError ) as exc:
            raise misc.pool_error( "pool %s:%d unreachable: %s" % ( self.address + ( exc, )))
        if response is None:
            raise misc.pool_error( "pool %s:%d closed the connection" % self.address )
        return response

    def publish( self, e ):
        doc                     = encode_entry( e )
        doc['op']               = 'publish'
        response                = self._call( doc )
        if response.get( 'ok' ):
            return True, response['version']
        if response.get( 'reason' ) == 'stale':
            return False, response['version']
        if response.get( 'reason' ) == 'incompatible':
            raise misc.incompatible( response.get( 'detail' ) or "incompatible head" )
        raise misc.protocol_error( "publish rejected: %s: %s" % ( response.get( 'reason' ), response.get( 'detail' )))

    def fetch( self, exclude_user = None, prefix = None ):
        """Raises misc.pool_error if the server can't answer (eg. the response is too large)."""
        response                = self._call( { 'op': 'fetch', 'exclude_user': exclude_user, 'prefix': prefix } )
        if not response.get( 'ok' ):
            raise misc.pool_error( "pool %s:%d refused fetch: %s: %s" % (
                self.address + ( response.get( 'reason' ), response.get( 'detail' ))))
        return [ decode_entry( doc ) for doc in response.get( 'entries', [] ) ]


class file_pool( object ):
    """
    A pool in a directory, usable by several processes on one machine: each key is one file
    '<user>_<feature>.pool' holding the same JSON document as a publish request, replaced
    atomically (write a temporary, then rename) on every accepted publish.  Version monotonicity
    is enforced within this process; across processes, concurrent publishers of one key must be
    the same user (as they always are).  A scope's canonical shape is that of any head already
    in the directory for it, else of the first head this process publishes to it.
    """
    def __init__( self, directory, shape = None ):
        self.directory          = directory
        self.lock               = threading.Lock()
        self.shape              = shape
        self.shapes             = {}
        try:
            os.makedirs( directory, exist_ok=True )
        except OSError as exc:
            raise misc.pool_error( "cannot create pool directory %s: %s" % ( directory, exc ))
        if not os.access( directory, os.W_OK | os.X_OK ):
            raise misc.pool_error( "pool directory %s is not writable" % directory )

    def __repr__( self ):
        return "<file_pool %s>" % self.directory

    def path( self, user_id, feature_index ):
        return os.path.join( self.directory, "%s_%d%s" % ( user_id, feature_index, SUFFIX ))

    def _read( self, path ):
        with open( path, 'r' ) as f:
            return decode_entry( json.load( f ))

    def _canonical( self, run, shape ):
        if self.shape is not None:
            return self.shape
        if run not in self.shapes:
            for e in self.fetch( prefix=run + '.' if run else None ):
                if scope( e.user_id ) == run:
                    self.shapes[run] = e.weights.shape()
                    break
            else:
                self.shapes[run] = shape
        return self.shapes[run]

    def publish( self, e ):
        path                    = self.path( e.user_id, e.feature_index )
        shape                   = e.weights.shape()
        with self.lock:
            canonical           = self._canonical( scope( e.user_id ), shape )
            if shape != canonical:
                raise misc.incompatible( "incompatible head: %s/%d shape %s; pool holds %s" % (
                    e.user_id, e.feature_index, shape, canonical ))
            try:
                current         = self._read( path )
            except FileNotFoundError:
                current         = None
            except ( OSError, ValueError ) as exc:
                log.warning( "%s: unreadable; replacing: %s" % ( path, exc ))
                current         = None
            if current is not None and e.version <= current.version:
                return False, current.version
            try:
                fd, tmp         = tempfile.mkstemp( dir=self.directory, prefix='.', suffix='.tmp' )
                try:
                    with os.fdopen( fd, 'w' ) as f:
                        json.dump( encode_entry( e ), f )
                        f.flush()
                        os.fsync( f.fileno() )
                    os.replace( tmp, path )
                except BaseException:
                    if os.path.exists( tmp ):
                        os.unlink( tmp )
                    raise
            except OSError as exc:
                raise misc.pool_error( "cannot publish to %s: %s" % ( path, exc ))
        return True, e.version

    def fetch( self, exclude_user = None, prefix = None ):
        try:
            names               = sorted( os.listdir( self.directory ))
        except OSError as exc:
            raise misc.pool_error( "cannot list pool directory %s: %s" % ( self.directory, exc ))
        entries                 = []
        for name in names:
            if not name.endswith( SUFFIX ) or name.startswith( '.' ):
                continue
            if prefix and not name.startswith( prefix ):
                continue
            try:
                e               = self._read( os.path.join( self.directory, name ))
            except FileNotFoundError:
                continue
            except ( OSError, ValueError ) as exc:
                log.warning( "%s: unreadable pool file skipped: %s" % ( name, exc ))
                continue
            if _selected( e, exclude_user, prefix ):
                entries.append( e )
        return sorted( entries, key=federation.key )


def connect( endpoint = None ):
    """
    The pool named by endpoint (default: $FEDSPARSE_POOL): 'host:port' for a server, 'file:<dir>'
    or an existing directory for a file pool; nothing selects a fresh in-process store.
    """
    if endpoint is None:
        endpoint                = os.environ.get( ENVIRONMENT )
    if not endpoint:
        return store()
    if endpoint.startswith( 'file:' ):
        return file_pool( endpoint[len( 'file:' ):] )
    if os.path.isdir( endpoint ):
        return file_pool( endpoint )
    return client( endpoint )
