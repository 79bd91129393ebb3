import json
import os
import random
import socket
import threading

import pytest
from hypothesis import given, settings, strategies as st

from pkgbridge.bridge import (
    BackendFailure,
    BridgeClient,
    BridgeError,
    BridgeMessage,
    BridgeServer,
    ClientConfig,
    DirectBridge,
    Mapping,
    NoMappingFound,
    ProtocolError,
    RemoteError,
    SocketBindError,
    decode,
    discover,
    discover_candidates,
    encode,
    install,
    load_presets,
    remove,
)
from pkgbridge.fakepm import Catalog, CatalogEntry, FakePackageManager, load_catalog
from pkgbridge.recipegen import NameTransform

FEDORA = Mapping("R-CRAN-")


@pytest.fixture
def debian_pm(fixtures):
    return FakePackageManager(load_catalog((fixtures / "debian.catalog.tsv").read_text()))


class CountingBackend(FakePackageManager):
    def __init__(self, catalog):
        super().__init__(catalog)
        self.calls = 0

    def list_available(self):
        self.calls += 1
        return super().list_available()

    def query_installed(self):
        self.calls += 1
        return super().query_installed()


class CrashingBackend(FakePackageManager):
    def install(self, names, progress=None):
        raise RuntimeError("segfault in solver")


class TestProtocol:
    def test_roundtrip(self):
        msg = BridgeMessage.ok(3, "install", ["R-CRAN-units"], ["gifski"])
        assert decode(encode(msg)) == msg

    def test_wire_shape(self):
        line = encode(BridgeMessage.request(1, "install", ["units"]))
        assert line.endswith(b"\n") and line.count(b"\n") == 1
        assert json.loads(line) == {"kind": "Request", "request_id": 1, "op": "install", "args": ["units"]}

    def test_discover_response_has_no_not_found(self):
        assert "not_found" not in BridgeMessage.ok(1, "discover", ["R-CRAN-", "identity"]).to_dict()

    def test_failure(self):
        msg = decode(encode(BridgeMessage.failure(2, "boom", "remove")))
        assert msg.status == "Error" and msg.error == "boom"

    @pytest.mark.parametrize("line", [
        b"not json",
        b"[]",
        b'{"kind":"Request","request_id":1}',
        b'{"kind":"Bogus","request_id":1,"op":"install"}',
        b'{"kind":"Request","request_id":"1","op":"install"}',
        b'{"kind":"Request","request_id":true,"op":"install"}',
        b'{"kind":"Request","request_id":1,"op":"upgrade"}',
        b'{"kind":"Request","request_id":1,"op":"install","args":[1]}',
        b'{"kind":"Response","request_id":1,"op":"install"}',
        b'{"kind":"Request","request_id":1,"op":"install","extra":0}',
        b"\xff\xfe",
    ])
    def test_malformed(self, line):
        with pytest.raises(ProtocolError):
            decode(line)


class TestMapping:
    def test_translate(self):
        assert FEDORA.translate("units") == "R-CRAN-units"
        assert Mapping("r-cran-", NameTransform.LOWERCASE).translate("Rcpp") == "r-cran-rcpp"

    def test_reverse(self):
        assert FEDORA.reverse("R-CRAN-Rcpp") == "Rcpp"
        assert FEDORA.reverse("udunits2") is None

    def test_reverse_lowercase_uses_candidates(self):
        m = Mapping("r-cran-", NameTransform.LOWERCASE)
        assert m.reverse("r-cran-rcpp", ["Rcpp", "units"]) == "Rcpp"
        assert m.reverse("r-cran-rcpp") == "rcpp"

    def test_presets_and_exclusions(self):
        presets, excl = load_presets("# admin\nRcpp\trcpp-special\ngifski\tEXCLUDE\n")
        m = FEDORA.with_admin(presets, excl)
        assert m.translate("Rcpp") == "rcpp-special"
        assert m.translate("gifski") is None
        assert m.reverse("rcpp-special") == "Rcpp"

    def test_bad_presets(self):
        with pytest.raises(ValueError):
            load_presets("only-one-column\n")


class TestDiscover:
    def test_fedora(self, primer_pm):
        m = discover(primer_pm, probes=["Rcpp", "units"])
        assert (m.prefix, m.transform) == ("R-CRAN-", NameTransform.IDENTITY)

    def test_debian_single_package(self):
        pm = FakePackageManager(Catalog({"r-cran-rcpp": CatalogEntry("1.0", frozenset())}))
        m = discover(pm, probes=["Rcpp"])
        assert (m.prefix, m.transform) == ("r-cran-", NameTransform.LOWERCASE)

    def test_debian_catalog(self, debian_pm):
        m = discover(debian_pm, probes=["MASS", "Rcpp", "units"])
        assert (m.prefix, m.transform) == ("r-cran-", NameTransform.LOWERCASE)

    def test_empty(self):
        with pytest.raises(NoMappingFound):
            discover(FakePackageManager(Catalog({})))

    def test_coverage_beats_accident(self):
        avail = ["R-CRAN-MASS", "R-CRAN-Rcpp", "xMASS"]
        ranked = discover_candidates(avail, ["MASS", "Rcpp"])
        assert ranked[0].prefix == "R-CRAN-" and ranked[0].coverage == 2


class TestOperations:
    def test_install_with_fallback(self, primer_pm):
        res = install(["gifski", "units"], FEDORA, primer_pm)
        assert res.installed == ("R-CRAN-Rcpp", "udunits2", "R-CRAN-units")
        assert res.not_found == ("gifski",)

    def test_install_is_noop_second_time(self, primer_pm):
        install(["units"], FEDORA, primer_pm)
        before = primer_pm.query_installed()
        res = install(["units"], FEDORA, primer_pm)
        assert res.installed == () and res.not_found == ()
        assert primer_pm.query_installed() == before
        assert primer_pm.transaction_log()[-1].changed == ()

    def test_empty_list(self, primer_pm):
        with pytest.raises(ValueError):
            install([], FEDORA, primer_pm)
        with pytest.raises(ValueError):
            remove([], FEDORA, primer_pm)

    def test_remove_with_autoremove(self, primer_pm):
        install(["units"], FEDORA, primer_pm)
        res = remove(["units"], FEDORA, primer_pm)
        assert res.removed == ("R-CRAN-units", "R-CRAN-Rcpp", "udunits2")

    def test_remove_unknown(self, primer_pm):
        res = remove(["nonexistent"], FEDORA, primer_pm)
        assert res.removed == () and res.not_found == ("nonexistent",)

    def test_remove_keeps_requested_dependency(self, primer_pm):
        install(["units", "Rcpp"], FEDORA, primer_pm)
        assert remove(["units"], FEDORA, primer_pm).removed == ("R-CRAN-units", "udunits2")

    def test_excluded_falls_back(self, primer_pm):
        m = FEDORA.with_admin({}, {"units"})
        res = install(["units"], m, primer_pm)
        assert res.not_found == ("units",) and primer_pm.query_installed() == {}

    def test_backend_error_wrapped(self, primer_pm):
        install(["units"], FEDORA, primer_pm)
        primer_pm._busy.acquire()
        try:
            with pytest.raises(BackendFailure):
                remove(["units"], FEDORA, primer_pm)
        finally:
            primer_pm._busy.release()

    def test_progress_forwarded(self, primer_pm):
        lines = []
        install(["units"], FEDORA, primer_pm, lines.append)
        assert len(lines) == 3


class TestClientConfig:
    def test_disabled_does_not_touch_backend(self, primer_catalog, tmp_path):
        backend = CountingBackend(primer_catalog)
        cfg = ClientConfig.load(tmp_path / "cfg.json")
        cfg.disable()
        res = DirectBridge(backend, FEDORA, cfg).install(["units"])
        assert res.installed == () and res.not_found == ("units",)
        assert backend.calls == 0
        assert DirectBridge(backend, FEDORA, cfg).remove(["units"]).not_found == ("units",)

    def test_toggle_is_identity(self, tmp_path):
        path = tmp_path / "cfg.json"
        cfg = ClientConfig.load(path)
        assert cfg.enabled
        cfg.enable()
        before = path.read_bytes()
        cfg.disable()
        assert not ClientConfig.load(path).enabled
        cfg.enable()
        assert path.read_bytes() == before and ClientConfig.load(path).enabled

    def test_disabled_client_never_connects(self, sock_dir):
        client = BridgeClient(sock_dir / "absent.sock", ClientConfig(enabled=False))
        assert client.install(["units"]).not_found == ("units",)

    def test_missing_socket_env(self, monkeypatch):
        monkeypatch.delenv("PKGBRIDGE_SOCKET", raising=False)
        with pytest.raises(BridgeError):
            BridgeClient()


@pytest.fixture
def served(sock_dir, primer_catalog):
    pm = FakePackageManager(primer_catalog)
    server = BridgeServer(sock_dir / "bridge.sock", pm, poll_interval=0.01)
    with server:
        yield server


class TestServer:
    def test_discover_and_install(self, served):
        with BridgeClient(served.socket_path) as c:
            m = c.discover()
            assert (m.prefix, m.transform) == ("R-CRAN-", NameTransform.IDENTITY)
            progress = []
            res = c.install(["gifski", "units"], progress.append)
            assert res.installed == ("R-CRAN-Rcpp", "udunits2", "R-CRAN-units")
            assert res.not_found == ("gifski",)
            assert len(progress) == 3

    def test_empty_request_is_error_response(self, served):
        with BridgeClient(served.socket_path) as c:
            msg = c.request("install", [])
            assert msg.status == "Error"

    def test_malformed_keeps_connection(self, served):
        with BridgeClient(served.socket_path) as c:
            bad = c.send_raw(b"{this is not json")
            assert bad.status == "Error" and bad.error == "malformed"
            assert c.install(["units"]).installed

    def test_audit_records_peer(self, served):
        with BridgeClient(served.socket_path) as c:
            c.install(["units"])
        [record] = served.audit
        assert record.op == "install" and record.args == ("units",)
        assert record.pid == os.getpid() and record.uid == os.getuid()

    def test_backend_crash_does_not_kill_service(self, sock_dir, primer_catalog):
        with BridgeServer(sock_dir / "b.sock", CrashingBackend(primer_catalog), FEDORA,
                          poll_interval=0.01) as server:
            with BridgeClient(server.socket_path) as c:
                with pytest.raises(RemoteError, match="crash"):
                    c.install(["units"])
                assert c.remove(["units"]).not_found == ("units",)

    def test_concurrent_clients(self, served):
        names = ["units", "Rcpp", "gifski"]
        errors = []

        def worker(i):
            try:
                with BridgeClient(served.socket_path) as c:
                    for j in range(5):
                        op = c.install if (i + j) % 2 else c.remove
                        op([names[(i + j) % 3]])
            except Exception as exc:  # pragma: no cover - surfaced below
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(30)
        assert not errors
        assert served.backend.verify_journal()

    def test_bind_conflict(self, served, primer_pm):
        with pytest.raises(SocketBindError):
            BridgeServer(served.socket_path, primer_pm).start()

    def test_stale_socket_replaced(self, sock_dir, primer_pm):
        path = sock_dir / "stale.sock"
        s = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        s.bind(str(path))
        s.close()  # leaves the file behind with nobody listening
        with BridgeServer(path, primer_pm, FEDORA, poll_interval=0.01) as server:
            with BridgeClient(server.socket_path) as c:
                assert c.install(["units"]).installed
        assert not path.exists()

    def test_unbindable_path(self, sock_dir, primer_pm):
        with pytest.raises(SocketBindError):
            BridgeServer(sock_dir / "missing-dir" / "x.sock", primer_pm).start()

    def test_preset_mapping_is_reported(self, sock_dir, primer_pm):
        preset = Mapping("R-CRAN-", NameTransform.IDENTITY)
        with BridgeServer(sock_dir / "p.sock", primer_pm, preset, poll_interval=0.01) as server:
            with BridgeClient(server.socket_path) as c:
                assert c.discover().prefix == "R-CRAN-"

    def test_discover_failure(self, sock_dir):
        with BridgeServer(sock_dir / "e.sock", FakePackageManager(Catalog({})),
                          poll_interval=0.01) as server:
            with BridgeClient(server.socket_path) as c:
                with pytest.raises(RemoteError):
                    c.discover()


R_NAMES = ["units", "Rcpp", "gifski", "MASS"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.sampled_from(R_NAMES), min_size=1, max_size=4), max_size=6),
       st.integers(0, 2**32 - 1))
def test_fallback_partition(batches, seed):
    """Every requested name ends up either satisfied by the system or in not_found."""
    rng = random.Random(seed)
    pm = FakePackageManager(load_catalog(
        "R-CRAN-units\t0.6.7\tR-CRAN-Rcpp,udunits2\nR-CRAN-Rcpp\t1.0.5\t\nudunits2\t2.2\t\n"))
    for names in batches:
        if rng.random() < 0.7:
            res = install(names, FEDORA, pm)
            present = pm.query_installed()
        else:
            before = pm.query_installed()
            res = remove(names, FEDORA, pm)
            present = {n for n in before if n not in res.removed}
        for name in set(names):
            handled = FEDORA.translate(name) in present if res.op == "install" else (
                FEDORA.translate(name) in res.removed)
            assert handled != (name in res.not_found)
        assert len(res.not_found) == len(set(res.not_found))
