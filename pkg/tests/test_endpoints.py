"""Tests for the subprocess and HTTP classifier endpoints against loopback stubs."""

import json
import socket
from concurrent.futures import ThreadPoolExecutor

import pytest

from src.editcert.certify import SmoothingConfig, certify, tally_votes
from src.editcert.endpoints import (
    EndpointProtocolError,
    EndpointRemoteError,
    EndpointTransportError,
    HttpEndpoint,
    SubprocessEndpoint,
    decode_tokens,
    encode_tokens,
    external_query,
    make_endpoint,
)
from src.editcert.seqcore import LEVENSHTEIN, Alphabet, TokenSeq
from src.editcert.smoothing import DeletionMechanism, SeedSpec
from tests.helpers import seq, stub_command
from tests.stubs.http_classifier import StubServer, StubState

QUICK = 0.2


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class TestTokenCodec:

    def test_byte_alphabet(self):
        x = TokenSeq(tuple(range(256)))
        assert decode_tokens(encode_tokens(x), x.alphabet) == x
        assert encode_tokens(TokenSeq(())) == ""

    def test_wide_alphabet(self):
        alphabet = Alphabet(70_000)
        x = TokenSeq((0, 255, 256, 69_999), alphabet)
        assert decode_tokens(encode_tokens(x), alphabet) == x


class TestSubprocessEndpoint:

    def test_constant_stub(self):
        with SubprocessEndpoint(stub_command("--mode", "const"), handshake_wait=QUICK) as endpoint:
            assert external_query(endpoint, seq("anything")) == 1
            assert endpoint.query(seq("")) == 1

    def test_parity_stub(self):
        with SubprocessEndpoint(stub_command("--mode", "parity"), handshake_wait=QUICK) as endpoint:
            assert endpoint.query(seq("ABCD")) == 0
            assert endpoint.query(seq("ABC")) == 1

    def test_tokens_arrive_losslessly(self, tmp_path):
        log = tmp_path / "requests.jsonl"
        sent = [TokenSeq(tuple(range(256))), TokenSeq(())]
        with SubprocessEndpoint(stub_command("--log", str(log)), handshake_wait=QUICK) as endpoint:
            for x in sent:
                endpoint.query(x)
        received = [json.loads(line) for line in log.read_text().splitlines()]
        assert received == [list(x.tokens) for x in sent]

    def test_wide_tokens_arrive_losslessly(self, tmp_path):
        log = tmp_path / "requests.jsonl"
        x = TokenSeq(tuple(range(0, 1000, 7)), Alphabet(1000))
        with SubprocessEndpoint(stub_command("--width", "4", "--log", str(log)), handshake_wait=QUICK) as endpoint:
            endpoint.query(x)
        assert json.loads(log.read_text()) == list(x.tokens)

    def test_remote_error(self):
        with SubprocessEndpoint(stub_command("--mode", "err"), handshake_wait=QUICK) as endpoint:
            with pytest.raises(EndpointRemoteError):
                endpoint.query(seq("AB"))

    def test_malformed_response(self):
        with SubprocessEndpoint(stub_command("--mode", "garbage"), handshake_wait=QUICK) as endpoint:
            with pytest.raises(EndpointProtocolError):
                endpoint.query(seq("AB"))

    def test_class_out_of_range(self):
        with SubprocessEndpoint(stub_command("--value", "5"), handshake_wait=QUICK) as endpoint:
            with pytest.raises(EndpointProtocolError):
                endpoint.query(seq("AB"))

    def test_missing_executable(self):
        with pytest.raises(EndpointTransportError) as excinfo:
            SubprocessEndpoint(["/nonexistent/classifier"])
        assert excinfo.value.attempts == 1

    def test_dead_endpoint_reports_attempts(self):
        endpoint = SubprocessEndpoint(stub_command("--mode", "die"), retries=2, handshake_wait=QUICK)
        try:
            with pytest.raises(EndpointTransportError) as excinfo:
                endpoint.query(seq("AB"))
            assert excinfo.value.attempts == 3
        finally:
            endpoint.close()

    def test_restart_after_crash(self, tmp_path):
        state = tmp_path / "state"
        command = stub_command("--mode", "die-once", "--state", str(state))
        with SubprocessEndpoint(command, retries=1, handshake_wait=QUICK) as endpoint:
            assert endpoint.query(seq("AB")) == 1
        assert state.exists()

    def test_pipelined_endpoint(self):
        with SubprocessEndpoint(stub_command("--caps", "4", "--mode", "parity"), handshake_wait=5.0) as endpoint:
            assert endpoint.max_concurrency == 4
            counts = tally_votes(seq("ABCDEFGH"), endpoint, DeletionMechanism(0.5), 0, 0, 100, 2)
            serial = [endpoint.query(DeletionMechanism(0.5).sample(seq("ABCDEFGH"), spec))
                      for spec in (SeedSpec(0, i) for i in range(100))]
            assert counts.sum() == 100
            assert counts[1] == sum(serial)

    def test_late_caps_announcement(self):
        command = stub_command("--caps", "2", "--startup-delay", "1.0", "--value", "0")
        with SubprocessEndpoint(command, retries=0, handshake_wait=QUICK) as endpoint:
            assert endpoint.max_concurrency == 1
            answers = [endpoint.query(seq("AB" * i)) for i in range(1, 5)]
            assert endpoint.max_concurrency == 2
        assert answers == [0, 0, 0, 0]

    def test_late_caps_with_pipelined_votes(self):
        command = stub_command("--caps", "3", "--startup-delay", "1.0", "--mode", "parity")
        with SubprocessEndpoint(command, retries=0, handshake_wait=QUICK) as endpoint:
            first = endpoint.query(seq("ABC"))
            counts = tally_votes(seq("ABCDEFGH"), endpoint, DeletionMechanism(0.5), 0, 0, 60, 2)
        assert first == 1
        assert counts.sum() == 60

    def test_certify_through_endpoint(self):
        with SubprocessEndpoint(stub_command(), handshake_wait=QUICK) as endpoint:
            cfg = SmoothingConfig(n_pred=20, n_bnd=50)
            verdict = certify(seq("ABCDEFGH"), endpoint, cfg, [LEVENSHTEIN], master_seed=1)
        assert verdict.prediction == 1


class TestHttpEndpoint:

    def test_constant_server(self):
        with StubServer() as server:
            endpoint = HttpEndpoint(server.url)
            assert endpoint.query(seq("AB")) == 1
            assert server.state.paths == ["/predict"]
            assert server.state.requests[0] == {"tokens_b64": encode_tokens(seq("AB"))}
            endpoint.close()

    def test_retries_server_errors(self):
        with StubServer(StubState(fail_first=2)) as server:
            endpoint = HttpEndpoint(server.url, retries=2)
            assert endpoint.query(seq("AB")) == 1
            assert len(server.state.requests) == 3

    def test_gives_up_after_retries(self):
        with StubServer(StubState(fail_first=10)) as server:
            with pytest.raises(EndpointTransportError) as excinfo:
                HttpEndpoint(server.url, retries=1).query(seq("AB"))
        assert excinfo.value.attempts == 2

    def test_client_error_not_retried(self):
        with StubServer(StubState(mode="bad-request")) as server:
            with pytest.raises(EndpointRemoteError):
                HttpEndpoint(server.url, retries=3).query(seq("AB"))
            assert len(server.state.requests) == 1

    def test_protocol_errors(self):
        with StubServer(StubState(mode="not-json")) as server:
            with pytest.raises(EndpointProtocolError):
                HttpEndpoint(server.url).query(seq("AB"))
        with StubServer(StubState(mode="no-class")) as server:
            with pytest.raises(EndpointProtocolError):
                HttpEndpoint(server.url).query(seq("AB"))
        with StubServer(StubState(value=True)) as server:
            with pytest.raises(EndpointProtocolError):
                HttpEndpoint(server.url).query(seq("AB"))

    def test_unreachable(self):
        endpoint = HttpEndpoint(f"http://127.0.0.1:{free_port()}", retries=1, timeout=2.0)
        with pytest.raises(EndpointTransportError) as excinfo:
            endpoint.query(seq("AB"))
        assert excinfo.value.attempts == 2

    def test_explicit_path_kept(self):
        with StubServer() as server:
            assert HttpEndpoint(server.url + "/v1/classify").query(seq("A")) == 1
            assert server.state.paths == ["/v1/classify"]


def test_make_endpoint_dispatch():
    assert isinstance(make_endpoint("http://127.0.0.1:9/"), HttpEndpoint)
    endpoint = make_endpoint(" ".join(stub_command()))
    try:
        assert isinstance(endpoint, SubprocessEndpoint)
    finally:
        endpoint.close()


class TestHttpConcurrency:

    @staticmethod
    def certify_rows(endpoint, rows: int):
        cfg = SmoothingConfig(mechanism=DeletionMechanism(0.5), n_pred=5, n_bnd=10)
        with ThreadPoolExecutor(max_workers=rows) as pool:
            futures = [pool.submit(certify, seq("ABCDEFGH"), endpoint, cfg, [LEVENSHTEIN], i)
                       for i in range(rows)]
            return [f.result() for f in futures]

    def test_serialized_across_rows(self):
        with StubServer(StubState(delay=0.01)) as server:
            endpoint = HttpEndpoint(server.url, max_concurrency=1)
            verdicts = self.certify_rows(endpoint, 4)
            assert server.state.peak_in_flight == 1
            assert len(server.state.requests) == 4 * 15
        assert all(v.prediction == 1 for v in verdicts)

    def test_declared_limit_respected(self):
        with StubServer(StubState(delay=0.01)) as server:
            endpoint = HttpEndpoint(server.url, max_concurrency=2)
            self.certify_rows(endpoint, 4)
            assert 1 <= server.state.peak_in_flight <= 2
