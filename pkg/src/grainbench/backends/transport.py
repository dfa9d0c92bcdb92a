"""Message media for the rank executor.

Wire format (local_socket): length-prefixed binary frames of
``u32 little-endian payload length, u32 edge id, payload bytes``.
The payload's first 8 bytes carry the producer task's checksum
little-endian, padded with zeros up to the configured per-edge payload
size (so the payload is never smaller than 8 bytes).

The shared_queue medium moves the same (edge id, payload) pairs over
per-rank in-process queues, modeling shared-memory delivery.
"""

from __future__ import annotations

import queue
import selectors
import socket
import struct

from ..errors import BackendError

FRAME_HEADER = struct.Struct("<II")

_RECV_CHUNK = 65536
_SEND_TIMEOUT = 30.0


def encode_payload(checksum: int, output_bytes: int) -> bytes:
    size = max(8, output_bytes)
    return checksum.to_bytes(8, "little") + b"\x00" * (size - 8)


def decode_payload(payload: bytes) -> int:
    return int.from_bytes(payload[:8], "little")


def encode_frame(edge_id: int, payload: bytes) -> bytes:
    return FRAME_HEADER.pack(len(payload), edge_id) + payload


class FrameParser:
    """Reassembles frames from a stream of byte chunks."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[int, bytes]]:
        self._buf.extend(data)
        frames = []
        while True:
            if len(self._buf) < FRAME_HEADER.size:
                break
            length, edge_id = FRAME_HEADER.unpack_from(self._buf)
            end = FRAME_HEADER.size + length
            if len(self._buf) < end:
                break
            frames.append((edge_id, bytes(self._buf[FRAME_HEADER.size:end])))
            del self._buf[:end]
        return frames


class QueueMedium:
    """Per-rank in-process inboxes; reliable and FIFO per sender."""

    def __init__(self, ranks: int):
        self._inboxes = [queue.SimpleQueue() for _ in range(ranks)]

    def send(self, src: int, dst: int, edge_id: int, payload: bytes) -> None:
        self._inboxes[dst].put((edge_id, payload))

    def recv(self, rank: int, timeout: float):
        try:
            return self._inboxes[rank].get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        pass


class SocketMedium:
    """Full mesh of loopback TCP streams, one connection per rank pair."""

    def __init__(self, ranks: int):
        self._ends: list[dict[int, socket.socket]] = [{} for _ in range(ranks)]
        self._selectors: list[selectors.BaseSelector | None] = [None] * ranks
        self._parsers: list[dict[int, FrameParser]] = [{} for _ in range(ranks)]
        self._ready: list[list[tuple[int, bytes]]] = [[] for _ in range(ranks)]

        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            listener.bind(("127.0.0.1", 0))
            listener.listen(ranks * ranks)
            port = listener.getsockname()[1]
            for a in range(ranks):
                for b in range(a + 1, ranks):
                    client = socket.create_connection(("127.0.0.1", port))
                    server, _ = listener.accept()
                    for end in (client, server):
                        end.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                        end.settimeout(_SEND_TIMEOUT)
                    self._ends[a][b] = client
                    self._ends[b][a] = server
        except OSError as exc:
            self.close()
            raise BackendError(f"local_socket mesh setup failed: {exc}") from exc
        finally:
            listener.close()

        for rank in range(ranks):
            sel = selectors.DefaultSelector()
            for peer, sock in self._ends[rank].items():
                sel.register(sock, selectors.EVENT_READ, peer)
                self._parsers[rank][peer] = FrameParser()
            self._selectors[rank] = sel

    def send(self, src: int, dst: int, edge_id: int, payload: bytes) -> None:
        try:
            self._ends[src][dst].sendall(encode_frame(edge_id, payload))
        except (OSError, socket.timeout) as exc:
            raise BackendError(f"send rank {src} -> {dst} failed: {exc}") from exc

    def recv(self, rank: int, timeout: float):
        ready = self._ready[rank]
        if ready:
            return ready.pop(0)
        sel = self._selectors[rank]
        assert sel is not None
        for key, _ in sel.select(timeout=timeout):
            peer = key.data
            try:
                data = key.fileobj.recv(_RECV_CHUNK)
            except (BlockingIOError, InterruptedError):
                continue
            except OSError as exc:
                raise BackendError(f"recv on rank {rank} failed: {exc}") from exc
            if not data:
                raise BackendError(f"rank {rank} lost connection to rank {peer}")
            ready.extend(self._parsers[rank][peer].feed(data))
        if ready:
            return ready.pop(0)
        return None

    def close(self) -> None:
        for sel in self._selectors:
            if sel is not None:
                sel.close()
        seen = set()
        for ends in self._ends:
            for sock in ends.values():
                if id(sock) not in seen:
                    seen.add(id(sock))
                    try:
                        sock.close()
                    except OSError:
                        pass


def open_medium(medium: str, ranks: int):
    if medium == "shared_queue":
        return QueueMedium(ranks)
    if medium == "local_socket":
        return SocketMedium(ranks)
    raise BackendError(f"unknown transport medium {medium!r}")
