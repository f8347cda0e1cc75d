#!/usr/bin/env python3
"""
External Classifier Endpoints

Base classifiers that live outside the process:

- SubprocessEndpoint: a child process speaking a newline-delimited protocol
  on stdin/stdout ("PREDICT <b64>" -> "CLASS <n>" | "ERR <message>"). The child
  may announce pipelining support with a "CAPS concurrent=<n>" line at startup.
- HttpEndpoint: POST {"tokens_b64": ...} to /predict, expecting {"class": n}.

Transport failures are retried (restarting the child process when needed);
protocol violations and remote errors are surfaced immediately.

Author: EditCert Project
"""

import base64
import logging
import re
import select
import shlex
import subprocess
import threading
import time
from collections import deque
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from typing import Deque, List, Optional
from urllib.parse import urlparse

import numpy as np
import requests

from .classifiers import BaseClassifier
from .config import (
    ENDPOINT_BACKOFF,
    ENDPOINT_HANDSHAKE_WAIT,
    ENDPOINT_RETRIES,
    ENDPOINT_TIMEOUT,
    HTTP_PREDICT_PATH,
)
from .seqcore import Alphabet, TokenSeq

logger = logging.getLogger(__name__)

_CAPS_RE = re.compile(r"^CAPS concurrent=(\d+)$")


class EndpointError(RuntimeError):
    """Base class for external classifier failures."""


class EndpointTransportError(EndpointError):
    """The endpoint could not be reached after all attempts."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class EndpointProtocolError(EndpointError):
    """Malformed response or class index out of range."""


class EndpointRemoteError(EndpointError):
    """The endpoint answered with an explicit error."""


def encode_tokens(x: TokenSeq) -> str:
    """Base64 of the token bytes: one byte per token up to 256 symbols, else big-endian uint32."""
    if x.alphabet.size <= 256:
        raw = bytes(x.tokens)
    else:
        raw = np.asarray(x.tokens, dtype=">u4").tobytes()
    return base64.b64encode(raw).decode("ascii")


def decode_tokens(payload: str, alphabet: Alphabet) -> TokenSeq:
    raw = base64.b64decode(payload)
    if alphabet.size <= 256:
        return TokenSeq(tuple(raw), alphabet)
    if len(raw) % 4:
        raise ValueError("uint32 token payload length must be a multiple of 4")
    return TokenSeq(tuple(int(t) for t in np.frombuffer(raw, dtype=">u4")), alphabet)


def _parse_class(value, num_classes: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise EndpointProtocolError(f"Class must be an integer, got {value!r}")
    if not 0 <= value < num_classes:
        raise EndpointProtocolError(f"Class {value} outside [0, {num_classes})")
    return value


class SubprocessEndpoint(BaseClassifier):
    """Line-protocol classifier served by a child process."""

    def __init__(self, command: List[str], num_classes: int = 2,
                 retries: int = ENDPOINT_RETRIES, timeout: float = ENDPOINT_TIMEOUT,
                 handshake_wait: float = ENDPOINT_HANDSHAKE_WAIT):
        self.command = list(command)
        self.num_classes = num_classes
        self.retries = retries
        self.timeout = timeout
        self.handshake_wait = handshake_wait
        self.max_concurrency = 1

        self._proc: Optional[subprocess.Popen] = None
        self._pending: Deque[Future] = deque()
        self._write_lock = threading.Lock()
        self._restart_lock = threading.Lock()
        self._generation = 0
        self._slots = threading.BoundedSemaphore(1)
        self._closed = threading.Event()
        try:
            self._start()
        except OSError as e:
            raise EndpointTransportError(f"Cannot start endpoint {self.command}: {e}", 1) from e

    def _start(self) -> None:
        logger.debug(f"Starting endpoint process: {self.command}")
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1,
        )
        self._pending = deque()
        self._closed = threading.Event()
        self._read_handshake()
        self._slots = threading.BoundedSemaphore(self.max_concurrency)
        reader = threading.Thread(
            target=self._reader, args=(self._proc, self._pending, self._closed), daemon=True
        )
        reader.start()

    def _read_handshake(self) -> None:
        ready, _, _ = select.select([self._proc.stdout], [], [], self.handshake_wait)
        if not ready:
            return
        line = self._proc.stdout.readline()
        if not line:
            return
        match = _CAPS_RE.match(line.strip())
        if not match:
            raise EndpointProtocolError(f"Unexpected line before first request: {line.strip()!r}")
        self._declare_concurrency(int(match.group(1)))

    def _declare_concurrency(self, declared: int) -> None:
        self.max_concurrency = max(1, declared)
        # Holders of the previous semaphore release that object, not this one
        self._slots = threading.BoundedSemaphore(self.max_concurrency)
        logger.info(f"Endpoint declares {self.max_concurrency} concurrent requests")

    def _reader(self, proc: subprocess.Popen, pending: Deque[Future], closed: threading.Event) -> None:
        answered = False
        for line in proc.stdout:
            caps = None if answered else _CAPS_RE.match(line.strip())
            if caps:
                # Late announcement from a slow-starting child
                self._declare_concurrency(int(caps.group(1)))
                continue
            if not pending:
                logger.warning(f"Unsolicited endpoint output: {line.strip()!r}")
                continue
            answered = True
            pending.popleft().set_result(line)
        with self._write_lock:
            closed.set()
            while pending:
                pending.popleft().set_exception(EOFError("endpoint closed its output"))

    def _restart(self, generation: int) -> None:
        with self._restart_lock:
            if generation != self._generation:
                return
            self._kill()
            self._generation += 1
            self._start()

    def _kill(self) -> None:
        if self._proc is None:
            return
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=1.0)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def _roundtrip(self, x: TokenSeq) -> str:
        with self._slots:
            with self._write_lock:
                if self._closed.is_set():
                    raise EOFError("endpoint process has exited")
                future: Future = Future()
                self._pending.append(future)
                self._proc.stdin.write(f"PREDICT {encode_tokens(x)}\n")
                self._proc.stdin.flush()
            return future.result(timeout=self.timeout)

    def _parse(self, line: str) -> int:
        line = line.strip()
        if line.startswith("CLASS "):
            try:
                value = int(line[6:])
            except ValueError:
                raise EndpointProtocolError(f"Malformed response: {line!r}")
            return _parse_class(value, self.num_classes)
        if line.startswith("ERR"):
            raise EndpointRemoteError(line[3:].strip() or "unspecified error")
        raise EndpointProtocolError(f"Malformed response: {line!r}")

    def query(self, x: TokenSeq) -> int:
        attempts = self.retries + 1
        last_error: Optional[Exception] = None
        for attempt in range(1, attempts + 1):
            generation = self._generation
            try:
                return self._parse(self._roundtrip(x))
            except (OSError, EOFError, ValueError, FutureTimeout) as e:
                last_error = e
                logger.warning(f"Endpoint transport failure (attempt {attempt}/{attempts}): {e}")
                try:
                    self._restart(generation)
                except OSError as restart_error:
                    last_error = restart_error
        raise EndpointTransportError(f"Subprocess endpoint failed: {last_error}", attempts)

    def close(self) -> None:
        self._kill()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


class HttpEndpoint(BaseClassifier):
    """JSON-over-HTTP classifier."""

    def __init__(self, url: str, num_classes: int = 2, retries: int = ENDPOINT_RETRIES,
                 timeout: float = ENDPOINT_TIMEOUT, max_concurrency: int = 1):
        parsed = urlparse(url)
        if parsed.path in ("", "/"):
            url = url.rstrip("/") + HTTP_PREDICT_PATH
        self.url = url
        self.num_classes = num_classes
        self.retries = retries
        self.timeout = timeout
        self.max_concurrency = max(1, max_concurrency)
        self._slots = threading.BoundedSemaphore(self.max_concurrency)
        self._local = threading.local()

    @property
    def session(self) -> requests.Session:
        # requests.Session is not documented as thread-safe
        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
            self._local.session.headers.update({'User-Agent': 'EditCert/1.0'})
        return self._local.session

    def query(self, x: TokenSeq) -> int:
        attempts = self.retries + 1
        payload = {"tokens_b64": encode_tokens(x)}
        last_error = ""
        for attempt in range(1, attempts + 1):
            if attempt > 1:
                time.sleep(ENDPOINT_BACKOFF * (attempt - 1))
            try:
                # Shared by every caller, so concurrent certify rows still see one limit
                with self._slots:
                    response = self.session.post(self.url, json=payload, timeout=self.timeout)
            except requests.RequestException as e:
                last_error = str(e)
                logger.warning(f"HTTP endpoint unreachable (attempt {attempt}/{attempts}): {e}")
                continue

            if response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                logger.warning(f"HTTP endpoint returned {response.status_code} (attempt {attempt}/{attempts})")
                continue
            if response.status_code != 200:
                raise EndpointRemoteError(f"HTTP {response.status_code}: {response.text[:200]}")
            try:
                body = response.json()
            except ValueError:
                raise EndpointProtocolError(f"Response is not JSON: {response.text[:200]!r}")
            if not isinstance(body, dict) or "class" not in body:
                raise EndpointProtocolError(f"Response lacks 'class': {body!r}")
            return _parse_class(body["class"], self.num_classes)

        raise EndpointTransportError(f"HTTP endpoint {self.url} failed: {last_error}", attempts)

    def close(self) -> None:
        if hasattr(self._local, "session"):
            self._local.session.close()


def make_endpoint(spec: str, num_classes: int = 2, retries: int = ENDPOINT_RETRIES,
                  timeout: float = ENDPOINT_TIMEOUT, max_concurrency: int = 1) -> BaseClassifier:
    """http(s):// URLs become HttpEndpoint; anything else is a command line."""
    if spec.startswith(("http://", "https://")):
        return HttpEndpoint(spec, num_classes, retries, timeout, max_concurrency)
    return SubprocessEndpoint(shlex.split(spec), num_classes, retries, timeout)


def external_query(endpoint: BaseClassifier, x: TokenSeq) -> int:
    """Query an external endpoint for the class of ``x``."""
    return endpoint.query(x)
