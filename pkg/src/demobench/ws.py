"""Minimal RFC 6455 websocket framing plus a tiny static-file HTTP fallback.

Only what the hub needs: server-side handshake, text frames, fragmentation,
ping/pong, close; and a client used by tests and tooling. Binary frames are
not part of the wire contract and are rejected with a close.
"""
from __future__ import annotations

import base64
import hashlib
import os
import socket
import struct

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
    ".wasm": "application/wasm",
}


class WsClosed(Exception):
    pass


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise WsClosed("socket closed")
        buf += chunk
    return buf


def read_http_request(sock: socket.socket) -> tuple:
    """(request_line, headers dict with lowercase keys). Raises WsClosed."""
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise WsClosed("socket closed during HTTP request")
        data += chunk
        if len(data) > 65536:
            raise WsClosed("oversized HTTP request")
    head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
    lines = head.split("\r\n")
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            key, value = line.split(":", 1)
            headers[key.strip().lower()] = value.strip()
    return lines[0], headers


def is_websocket_upgrade(headers: dict) -> bool:
    return ("upgrade" in headers.get("connection", "").lower()
            and headers.get("upgrade", "").lower() == "websocket"
            and "sec-websocket-key" in headers)


def accept_handshake(sock: socket.socket, headers: dict) -> None:
    key = headers["sec-websocket-key"]
    accept = base64.b64encode(
        hashlib.sha1((key + _GUID).encode()).digest()).decode()
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
    )
    sock.sendall(response.encode("latin-1"))


def build_text_frame(text: str, mask: bool = False) -> bytes:
    payload = text.encode("utf-8")
    header = bytearray([0x81])  # FIN + text opcode
    length = len(payload)
    mask_bit = 0x80 if mask else 0x00
    if length < 126:
        header.append(mask_bit | length)
    elif length < (1 << 16):
        header.append(mask_bit | 126)
        header += struct.pack(">H", length)
    else:
        header.append(mask_bit | 127)
        header += struct.pack(">Q", length)
    if mask:
        key = os.urandom(4)
        header += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return bytes(header) + payload


def send_text(sock: socket.socket, text: str, mask: bool = False) -> None:
    sock.sendall(build_text_frame(text, mask))


def _send_control(sock: socket.socket, opcode: int, payload: bytes = b"",
                  mask: bool = False) -> None:
    header = bytearray([0x80 | opcode])
    mask_bit = 0x80 if mask else 0x00
    header.append(mask_bit | len(payload))
    if mask:
        key = os.urandom(4)
        header += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    sock.sendall(bytes(header) + payload)


def send_close(sock: socket.socket, mask: bool = False) -> None:
    _send_control(sock, 0x8, mask=mask)


def recv_text(sock: socket.socket, reply_mask: bool = False) -> str:
    """Next complete text message; handles fragmentation and ping/pong.

    Raises WsClosed on close frames or socket loss.
    """
    message = b""
    while True:
        b0, b1 = _read_exact(sock, 2)
        fin = b0 & 0x80
        opcode = b0 & 0x0F
        masked = b1 & 0x80
        length = b1 & 0x7F
        if length == 126:
            length = struct.unpack(">H", _read_exact(sock, 2))[0]
        elif length == 127:
            length = struct.unpack(">Q", _read_exact(sock, 8))[0]
        key = _read_exact(sock, 4) if masked else None
        payload = _read_exact(sock, length) if length else b""
        if key:
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))

        if opcode == 0x8:  # close
            try:
                send_close(sock, mask=reply_mask)
            except OSError:
                pass
            raise WsClosed("close frame")
        if opcode == 0x9:  # ping -> pong
            _send_control(sock, 0xA, payload, mask=reply_mask)
            continue
        if opcode == 0xA:  # pong
            continue
        if opcode == 0x2:
            send_close(sock, mask=reply_mask)
            raise WsClosed("binary frames unsupported")
        if opcode in (0x0, 0x1):
            message += payload
            if fin:
                return message.decode("utf-8")
            continue
        raise WsClosed(f"unexpected opcode {opcode}")


def connect(host: str, port: int, path: str = "/",
            timeout: float = 10.0) -> socket.socket:
    """Client-side handshake; returns the connected socket. Client frames
    must be sent with mask=True per RFC 6455."""
    sock = socket.create_connection((host, port), timeout=timeout)
    key = base64.b64encode(os.urandom(16)).decode()
    request = (
        f"GET {path} HTTP/1.1\r\n"
        f"Host: {host}:{port}\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\n"
        "Sec-WebSocket-Version: 13\r\n\r\n"
    )
    sock.sendall(request.encode("latin-1"))
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise WsClosed("handshake failed: connection closed")
        data += chunk
    status = data.split(b"\r\n", 1)[0]
    if b"101" not in status:
        raise WsClosed(f"handshake rejected: {status!r}")
    expected = base64.b64encode(
        hashlib.sha1((key + _GUID).encode()).digest()).decode()
    if expected.encode("latin-1") not in data:
        raise WsClosed("handshake accept-key mismatch")
    sock.settimeout(None)
    return sock


def serve_static(sock: socket.socket, request_line: str, static_dir: str) -> None:
    """One-shot GET handler for UI assets; connection closes afterwards."""
    parts = request_line.split()
    ok = len(parts) >= 2 and parts[0] == "GET"
    path = parts[1].split("?", 1)[0] if ok else "/"
    if path.endswith("/"):
        path += "index.html"
    root = os.path.realpath(static_dir)
    full = os.path.realpath(os.path.join(root, path.lstrip("/")))
    if not ok or not full.startswith(root + os.sep) and full != root:
        _http_error(sock, 400, "bad request")
        return
    if not os.path.isfile(full):
        _http_error(sock, 404, "not found")
        return
    with open(full, "rb") as fh:
        body = fh.read()
    ctype = _CONTENT_TYPES.get(os.path.splitext(full)[1], "application/octet-stream")
    header = (
        "HTTP/1.1 200 OK\r\n"
        f"Content-Type: {ctype}\r\n"
        f"Content-Length: {len(body)}\r\n"
        "Connection: close\r\n\r\n"
    )
    sock.sendall(header.encode("latin-1") + body)


def _http_error(sock: socket.socket, code: int, message: str) -> None:
    body = message.encode()
    header = (
        f"HTTP/1.1 {code} {message}\r\n"
        "Content-Type: text/plain\r\n"
        f"Content-Length: {len(body)}\r\n"
        "Connection: close\r\n\r\n"
    )
    try:
        sock.sendall(header.encode("latin-1") + body)
    except OSError:
        pass
