import json
from pathlib import Path

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plate_bench.backends import (
    AuthFailure,
    BackendConfig,
    BackendKind,
    CachedBackend,
    CommandFailure,
    HttpChatBackend,
    MalformedResponse,
    MockBackend,
    MockBehavior,
    QueryTimeout,
    RateLimited,
    RateLimiter,
    ResponseCache,
    ScriptedBackend,
    SubprocessBackend,
    VisionQuery,
    VisionReply,
    cache_key,
    extract_plate_token,
    load_backend_configs,
    save_backend_configs,
)
from plate_bench.forge import ForgeSpec
from plate_bench.labels import DIGITS, LETTERS, MALAYSIAN_SINGLE_LINE


class FakeClock:
    def __init__(self) -> None:
        self.t = 0.0
        self.sleeps: list[float] = []

    def now(self) -> float:
        return self.t

    def sleep(self, seconds: float) -> None:
        self.sleeps.append(seconds)
        self.t += seconds


def mock_config(**kw) -> BackendConfig:
    fields = dict(id="mock", kind=BackendKind.MOCK)
    fields.update(kw)
    return BackendConfig(**fields)


def query_for(images_dir, rec, prompt="read the plate") -> VisionQuery:
    data = (images_dir / rec.path).read_bytes()
    return VisionQuery(image=data, prompt=prompt)


class TestMockBackend:
    def test_zero_error_rate_returns_truth(self, small_forged, tmp_path):
        manifest, images_dir = small_forged
        backend = MockBackend(mock_config(), MockBehavior(), manifest, images_dir)
        for rec in manifest.records[:5]:
            reply = backend.query(query_for(Path(images_dir), rec))
            assert reply.text == rec.label.chars

    def test_deterministic_replies(self, small_forged):
        manifest, images_dir = small_forged
        behavior = MockBehavior(char_error_rate=0.3, seed=5)
        a = MockBackend(mock_config(), behavior, manifest, images_dir)
        b = MockBackend(mock_config(), behavior, manifest, images_dir)
        for rec in manifest.records[:5]:
            q = query_for(Path(images_dir), rec)
            assert a.query(q).text == b.query(q).text

    def test_confusion_bias_p_to_r(self, tmp_path):
        from plate_bench.forge import render_plate
        from plate_bench.labels import PlateFormat, PlateLabel
        from plate_bench.manifest import DatasetManifest, ImageRecord

        img = render_plate(PlateLabel("PJW6633"), PlateFormat(), ForgeSpec())
        img.save_png(tmp_path / "p.png")
        manifest = DatasetManifest(
            "bias",
            (ImageRecord("p", "p.png", 120, 50, PlateLabel("PJW6633")),),
        )
        behavior = MockBehavior(seed=3, confusion_bias=(("P", "R", 1.0),))
        backend = MockBackend(mock_config(), behavior, manifest, tmp_path)
        reply = backend.query(VisionQuery(image=(tmp_path / "p.png").read_bytes(), prompt="read"))
        assert reply.text == "RJW6633"

    def test_substitution_rate_within_binomial_bound(self, small_forged):

        from pathlib import Path

        manifest, images_dir = small_forged
        behavior = MockBehavior(char_error_rate=0.1, seed=17)
        backend = MockBackend(mock_config(), behavior, manifest, images_dir)
        rec = manifest.records[0]
        data = (Path(images_dir) / rec.path).read_bytes()
        truth = rec.label.chars
        total = errors = 0
        n_queries = 1500  # 1500 x 7 chars > 10k draws; rng varies per prompt
        for i in range(n_queries):
            reply = backend.query(VisionQuery(image=data, prompt=f"probe {i}"))
            assert len(reply.text) == len(truth)  # substitution-only
            total += len(truth)
            errors += sum(1 for a, b in zip(truth, reply.text) if a != b)
        assert abs(errors / total - 0.1) < 0.01

    def test_unknown_image_is_distinct_error(self, small_forged):
        manifest, images_dir = small_forged
        backend = MockBackend(mock_config(), MockBehavior(), manifest, images_dir)
        from plate_bench.backends import UnknownImage

        with pytest.raises(UnknownImage):
            backend.query(VisionQuery(image=b"not a known image", prompt="read"))


class TestQueryValidation:
    def test_empty_prompt_rejected(self):
        with pytest.raises(ValueError):
            VisionQuery(image=b"x", prompt="")

    def test_empty_image_rejected(self):
        with pytest.raises(ValueError):
            VisionQuery(image=b"", prompt="read")

    def test_reply_text_is_byte_faithful(self):
        backend = ScriptedBackend("s", lambda q: "  AB\n12 \t")
        reply = backend.query(VisionQuery(image=b"x", prompt="p"))
        assert reply.text == "  AB\n12 \t"


class TestRateLimiter:
    def test_window_never_exceeds_limit(self):
        clock = FakeClock()
        limiter = RateLimiter(per_minute=10, clock=clock)
        dispatch_times = []
        for _ in range(35):
            limiter.acquire()
            dispatch_times.append(clock.now())
            clock.t += 1.0  # one dispatch per simulated second
        for start in dispatch_times:
            in_window = sum(1 for t in dispatch_times if start <= t < start + 60.0)
            assert in_window <= 10

    def test_zero_limit_means_unlimited(self):
        clock = FakeClock()
        limiter = RateLimiter(per_minute=0, clock=clock)
        for _ in range(1000):
            limiter.acquire()
        assert clock.sleeps == []


def http_config(**kw) -> BackendConfig:
    fields = dict(
        id="http",
        kind=BackendKind.HTTP_CHAT,
        endpoint="https://api.example.test/v1/chat",
        max_attempts=3,
        backoff_s=0.0,
    )
    fields.update(kw)
    return BackendConfig(**fields)


def png_query(prompt="read the plate") -> VisionQuery:
    return VisionQuery(image=b"\x89PNG-fake-bytes", prompt=prompt)


class TestHttpChatBackend:
    def test_success_extracts_default_path_and_sends_prompt(self, monkeypatch):
        monkeypatch.setenv("PB_TEST_KEY", "canary-secret-123")
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["body"] = json.loads(request.content)
            seen["auth"] = request.headers.get("Authorization")
            return httpx.Response(200, json={"choices": [{"message": {"content": "WVL9335"}}]})

        backend = HttpChatBackend(
            http_config(auth_env="PB_TEST_KEY"),
            transport=httpx.MockTransport(handler),
            clock=FakeClock(),
        )
        reply = backend.query(png_query())
        assert reply.text == "WVL9335"
        assert seen["auth"] == "Bearer canary-secret-123"
        body_text = json.dumps(seen["body"])
        assert "read the plate" in body_text
        assert "base64" in body_text

    def test_missing_auth_env_is_auth_failure(self, monkeypatch):
        monkeypatch.delenv("PB_NO_SUCH_KEY", raising=False)
        backend = HttpChatBackend(
            http_config(auth_env="PB_NO_SUCH_KEY"),
            transport=httpx.MockTransport(lambda r: httpx.Response(200, json={})),
            clock=FakeClock(),
        )
        with pytest.raises(AuthFailure):
            backend.query(png_query())

    def test_http_401_is_auth_failure(self):
        backend = HttpChatBackend(
            http_config(),
            transport=httpx.MockTransport(lambda r: httpx.Response(401)),
            clock=FakeClock(),
        )
        with pytest.raises(AuthFailure):
            backend.query(png_query())

    def test_transient_500_retried_then_succeeds(self):
        attempts = {"n": 0}

        def handler(request: httpx.Request) -> httpx.Response:
            attempts["n"] += 1
            if attempts["n"] < 3:
                return httpx.Response(500)
            return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

        clock = FakeClock()
        backend = HttpChatBackend(
            http_config(backoff_s=2.0), transport=httpx.MockTransport(handler), clock=clock
        )
        assert backend.query(png_query()).text == "ok"
        assert attempts["n"] == 3
        assert clock.sleeps == [2.0, 4.0]  # exponential backoff

    def test_rate_limit_exhaustion_surfaces(self):
        backend = HttpChatBackend(
            http_config(max_attempts=2),
            transport=httpx.MockTransport(lambda r: httpx.Response(429)),
            clock=FakeClock(),
        )
        with pytest.raises(RateLimited):
            backend.query(png_query())
        assert backend.calls == 2

    def test_malformed_response_not_retried(self):
        attempts = {"n": 0}

        def handler(request: httpx.Request) -> httpx.Response:
            attempts["n"] += 1
            return httpx.Response(200, json={"unexpected": "shape"})

        backend = HttpChatBackend(
            http_config(), transport=httpx.MockTransport(handler), clock=FakeClock()
        )
        with pytest.raises(MalformedResponse):
            backend.query(png_query())
        assert attempts["n"] == 1

    def test_timeout_retried_until_exhaustion(self):
        def handler(request: httpx.Request) -> httpx.Response:
            raise httpx.ConnectTimeout("slow")

        backend = HttpChatBackend(
            http_config(max_attempts=3), transport=httpx.MockTransport(handler), clock=FakeClock()
        )
        with pytest.raises(QueryTimeout):
            backend.query(png_query())
        assert backend.calls == 3

    def test_custom_template_and_response_path(self, monkeypatch):
        def handler(request: httpx.Request) -> httpx.Response:
            body = json.loads(request.content)
            assert body["contents"][0]["parts"][0]["text"] == "read the plate"
            assert body["generationConfig"]["temperature"] == 0.0
            return httpx.Response(200, json={"candidates": [{"output": "PJG90"}]})

        config = http_config(
            request_template={
                "contents": [{"parts": [{"text": "{{prompt}}"}, {"inline_data": "{{image_b64}}"}]}],
                "generationConfig": {"temperature": "{{temperature}}"},
            },
            response_path="candidates.0.output",
        )
        backend = HttpChatBackend(config, transport=httpx.MockTransport(handler), clock=FakeClock())
        assert backend.query(png_query()).text == "PJG90"


class TestSubprocessBackend:
    def test_external_ocr_reads_image_and_prints_text(self):
        config = BackendConfig(
            id="ocr",
            kind=BackendKind.EXTERNAL_OCR,
            endpoint=(
                "python3 -c 'import sys; data=open(sys.argv[1],\"rb\").read(); "
                "print(\"PNG7777\" if data[:4]==b\"\\x89PNG\" else \"BAD\")' {image}"
            ),
        )
        backend = SubprocessBackend(config)
        reply = backend.query(VisionQuery(image=b"\x89PNG....", prompt="ignored"))
        assert reply.text.strip() == "PNG7777"

    def test_local_command_receives_prompt(self):
        config = BackendConfig(
            id="cmd",
            kind=BackendKind.LOCAL_COMMAND,
            endpoint="python3 -c 'import sys; print(sys.argv[1])' {prompt}",
        )
        backend = SubprocessBackend(config)
        reply = backend.query(VisionQuery(image=b"x", prompt="say ABC1234"))
        assert reply.text == "say ABC1234\n"

    def test_nonzero_exit_is_command_failure(self):
        config = BackendConfig(
            id="bad", kind=BackendKind.EXTERNAL_OCR, endpoint="python3 -c 'raise SystemExit(3)'"
        )
        with pytest.raises(CommandFailure):
            SubprocessBackend(config).query(VisionQuery(image=b"x", prompt="p"))


class TestCache:
    def test_second_identical_query_hits_cache(self, tmp_path):
        cache = ResponseCache(tmp_path)
        inner = ScriptedBackend("s", lambda q: "ABC1234")
        backend = CachedBackend(inner, cache)
        q = VisionQuery(image=b"img-bytes", prompt="p")
        first = backend.query(q)
        second = backend.query(q)
        assert not first.cached and second.cached
        assert second.text == first.text
        assert second.latency_ms == first.latency_ms  # original latency preserved
        assert inner.calls == 1

    def test_different_prompt_distinct_key(self):
        q1 = VisionQuery(image=b"img", prompt="a")
        q2 = VisionQuery(image=b"img", prompt="b")
        assert cache_key("s", q1) != cache_key("s", q2)

    def test_content_addressing_ignores_file_names(self, tmp_path):
        data = b"identical image bytes"
        (tmp_path / "one.png").write_bytes(data)
        (tmp_path / "two.png").write_bytes(data)
        q1 = VisionQuery(image=(tmp_path / "one.png").read_bytes(), prompt="p")
        q2 = VisionQuery(image=(tmp_path / "two.png").read_bytes(), prompt="p")
        assert cache_key("s", q1) == cache_key("s", q2)

    def test_corrupt_entry_treated_as_miss(self, tmp_path):
        cache = ResponseCache(tmp_path)
        q = VisionQuery(image=b"img", prompt="p")
        cache.store("s", q, VisionReply("T", 5, "s"))
        path = tmp_path / "s" / cache_key("s", q)
        path.write_text("{corrupt")
        assert cache.lookup("s", q) is None

    def test_refresh_policy_requeries(self, tmp_path):
        cache = ResponseCache(tmp_path)
        inner = ScriptedBackend("s", lambda q: "X1234")
        backend = CachedBackend(inner, cache, policy="refresh")
        q = VisionQuery(image=b"img", prompt="p")
        backend.query(q)
        backend.query(q)
        assert inner.calls == 2


class TestExtractPlateToken:
    def test_clean_plate_is_identity(self):
        assert extract_plate_token("WVL9335").chars == "WVL9335"

    def test_markdown_and_space_stripping(self):
        got = extract_plate_token("The license plate is **PJG 90**.")
        assert got.chars == "PJG90"

    def test_two_line_reply_joined_with_format(self):
        got = extract_plate_token("ABC\n1234", MALAYSIAN_SINGLE_LINE)
        assert got.chars == "ABC1234"

    def test_lowercase_reply_salvaged(self):
        assert extract_plate_token("wvl 9335").chars == "WVL9335"

    def test_hyphenated_plate(self):
        assert extract_plate_token("The plate reads: PJG-90.").chars == "PJG90"

    def test_no_candidate_returns_empty(self):
        got = extract_plate_token("?? !!")
        assert got.chars == "" and got.raw == "?? !!"

    def test_format_preference_picks_matching_run(self):
        got = extract_plate_token("Photo DSC99 shows plate XYZ 5678 parked", MALAYSIAN_SINGLE_LINE)
        assert got.chars == "XYZ5678"

    @given(
        st.text(alphabet=LETTERS, min_size=3, max_size=3),
        st.text(alphabet=DIGITS, min_size=4, max_size=4),
    )
    def test_identity_on_clean_formatted_plates(self, letters, digits):
        plate = letters + digits
        assert extract_plate_token(plate).chars == plate
        assert extract_plate_token(plate, MALAYSIAN_SINGLE_LINE).chars == plate


class TestConfigFiles:
    def test_round_trip_and_no_secret_serialization(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PB_CANARY", "super-secret-value-xyz")
        configs = [
            http_config(auth_env="PB_CANARY", rate_limit_per_min=60),
            mock_config(
                truth_manifest="m.jsonl",
                mock=MockBehavior(char_error_rate=0.05, seed=9, confusion_bias=(("P", "R", 0.5),)),
            ),
        ]
        path = tmp_path / "backends.json"
        save_backend_configs(configs, path)
        text = path.read_text()
        assert "super-secret-value-xyz" not in text
        assert "PB_CANARY" in text  # the env var NAME is fine
        loaded = load_backend_configs(path)
        assert loaded["http"].auth_env == "PB_CANARY"
        assert loaded["mock"].mock.confusion_bias == (("P", "R", 0.5),)

    def test_duplicate_backend_id_rejected(self, tmp_path):
        path = tmp_path / "backends.json"
        save_backend_configs([mock_config(), mock_config()], path)
        with pytest.raises(ValueError, match="duplicate"):
            load_backend_configs(path)
