import http.server
import threading

import numpy as np
import pytest
import torch

from stp4d.errors import DimensionError, EncoderError
from stp4d.nn import seed_parameters
from stp4d.prompt import (
    FileTextEncoder,
    PromptEmbedding,
    PromptInjection,
    ServiceTextEncoder,
    TimeVaryingPrompt,
    ToyTextEncoder,
    make_text_encoder,
    read_embedding_file,
    write_embedding_file,
)
from stp4d.seeding import torch_generator


class TestToyEncoder:
    def test_deterministic(self):
        enc = ToyTextEncoder(32, seed=1)
        a = enc.encode("a red cube spinning")
        b = enc.encode("a red cube spinning")
        assert torch.equal(a.values, b.values)
        assert abs(torch.linalg.vector_norm(a.values).item() - 1.0) < 1e-6

    def test_distinct_tokens_distinct_embeddings(self):
        enc = ToyTextEncoder(64)
        red = enc.encode("a red cube")
        blue = enc.encode("a blue cube")
        cosine = torch.dot(red.values, blue.values).item()
        assert cosine < 1.0 - 1e-6

    def test_token_order_sensitivity(self):
        enc = ToyTextEncoder(64)
        a = enc.encode("red cube")
        b = enc.encode("cube red")
        assert not torch.allclose(a.values, b.values)

    def test_empty_prompt(self):
        with pytest.raises(EncoderError):
            ToyTextEncoder(16).encode("   ")


class TestFileEncoder:
    def test_json_roundtrip_exact(self, tmp_path):
        values = torch.randn(768, generator=torch_generator(0), dtype=torch.float64)
        values = values / torch.linalg.vector_norm(values)
        path = tmp_path / "embed.json"
        write_embedding_file(path, values)
        back = read_embedding_file(path)
        assert torch.equal(back, values)
        enc = FileTextEncoder(path, 768)
        assert torch.allclose(enc.encode("anything").values, values)

    def test_binary_roundtrip(self, tmp_path):
        values = torch.randn(64, generator=torch_generator(1), dtype=torch.float64)
        path = tmp_path / "embed.bin"
        write_embedding_file(path, values, binary=True)
        back = read_embedding_file(path)
        assert (back - values).abs().max().item() < 1e-6  # f32 payload

    def test_missing_file(self, tmp_path):
        with pytest.raises(EncoderError):
            FileTextEncoder(tmp_path / "nope.json", 16)

    def test_wrong_dimension(self, tmp_path):
        path = tmp_path / "embed.json"
        write_embedding_file(path, torch.ones(8, dtype=torch.float64))
        with pytest.raises(EncoderError):
            FileTextEncoder(path, 16)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(EncoderError):
            read_embedding_file(path)


class _EmbeddingHandler(http.server.BaseHTTPRequestHandler):
    dim = 12

    def do_POST(self):
        self.rfile.read(int(self.headers.get("Content-Length", 0)))
        body = str([0.5] * self.dim).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


class TestServiceEncoder:
    def test_fetches_from_local_server(self):
        server = http.server.HTTPServer(("127.0.0.1", 0), _EmbeddingHandler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://127.0.0.1:{server.server_port}/embed"
            enc = ServiceTextEncoder(url, dim=12, timeout=5.0)
            emb = enc.encode("hello")
            assert emb.dim == 12
            assert abs(torch.linalg.vector_norm(emb.values).item() - 1.0) < 1e-9
        finally:
            server.shutdown()

    def test_unreachable_service(self):
        enc = ServiceTextEncoder("http://127.0.0.1:9/none", dim=4, timeout=0.2)
        with pytest.raises(EncoderError):
            enc.encode("hello")

    def test_factory(self, tmp_path):
        assert isinstance(make_text_encoder("toy", 8), ToyTextEncoder)
        with pytest.raises(EncoderError):
            make_text_encoder("cloud", 8)
        with pytest.raises(EncoderError):
            make_text_encoder("file", 8)

    def test_zero_embedding_rejected(self):
        with pytest.raises(EncoderError):
            PromptEmbedding(values=torch.zeros(4, dtype=torch.float64), source="toy")


class TestTimeVarying:
    def test_single_frame_shape(self):
        tvp = TimeVaryingPrompt(16)
        seed_parameters(tvp, 0)
        emb = ToyTextEncoder(16).encode("hi there")
        rows = tvp(emb, 1)
        assert rows.shape == (1, 16)

    def test_zero_final_layer_collapses_rows(self):
        tvp = TimeVaryingPrompt(16)
        seed_parameters(tvp, 1)
        with torch.no_grad():
            tvp.mlp.fc2.weight.zero_()
        emb = ToyTextEncoder(16).encode("hi there")
        rows = tvp(emb, 5)
        for t in range(1, 5):
            assert torch.equal(rows[t], rows[0])

    def test_distinct_frames_distinct_rows(self):
        tvp = TimeVaryingPrompt(16)
        seed_parameters(tvp, 2)
        rows = tvp(ToyTextEncoder(16).encode("hi there"), 4)
        for t in range(1, 4):
            assert not torch.allclose(rows[t], rows[0])

    def test_deterministic(self):
        tvp = TimeVaryingPrompt(16)
        seed_parameters(tvp, 3)
        emb = ToyTextEncoder(16).encode("spinning fox")
        assert torch.equal(tvp(emb, 3), tvp(emb, 3))


class TestPromptInjection:
    def make_tokens(self, frames, groups, dim, seed=0):
        return torch.randn(frames * groups, dim, generator=torch_generator(seed),
                           dtype=torch.float64)

    def test_single_frame_broadcasts_projected_row(self):
        inject = PromptInjection(8, head_count=2)
        seed_parameters(inject, 4)
        tokens = self.make_tokens(1, 5, 8)
        row = torch.randn(1, 8, generator=torch_generator(5), dtype=torch.float64)
        out = inject(tokens, row)
        projected = inject.attn.out_proj(inject.attn.v_proj(row))
        assert torch.allclose(out, tokens + projected.expand(5, 8), atol=1e-12)

    def test_null_conditioning_is_residual_only(self):
        inject = PromptInjection(8, head_count=2)
        seed_parameters(inject, 6)
        with torch.no_grad():
            inject.attn.v_proj.bias.zero_()
        tokens = self.make_tokens(2, 3, 8)
        rows = torch.zeros(2, 8, dtype=torch.float64)
        assert torch.allclose(inject(tokens, rows), tokens, atol=1e-14)

    def test_frame_restriction(self):
        inject = PromptInjection(8, head_count=2)
        seed_parameters(inject, 7)
        tokens = self.make_tokens(3, 4, 8)
        rows = torch.randn(3, 8, generator=torch_generator(8), dtype=torch.float64)
        base = inject(tokens, rows)
        bumped = rows.clone()
        bumped[2] += 5.0
        moved = inject(tokens, bumped)
        assert torch.equal(base[:8], moved[:8])       # frames 0,1 untouched
        assert not torch.allclose(base[8:], moved[8:])

    def test_attend_all_frames_mode(self):
        inject = PromptInjection(8, head_count=2, attend_all_frames=True)
        seed_parameters(inject, 9)
        tokens = self.make_tokens(2, 2, 8)
        rows = torch.randn(2, 8, generator=torch_generator(10), dtype=torch.float64)
        base = inject(tokens, rows)
        bumped = rows.clone()
        bumped[1] += 3.0
        moved = inject(tokens, bumped)
        assert not torch.allclose(base[:2], moved[:2])  # frame 0 now sees row 1

    def test_matches_hand_attention_oracle(self):
        inject = PromptInjection(2, head_count=1)
        seed_parameters(inject, 11)
        tokens = self.make_tokens(2, 1, 2, seed=12)
        rows = torch.randn(2, 2, generator=torch_generator(13), dtype=torch.float64)
        out = inject(tokens, rows).detach().numpy()

        def lin(x, layer):
            w = layer.weight.detach().numpy()
            b = layer.bias.detach().numpy() if layer.bias is not None else 0.0
            return x @ w + b

        attn = inject.attn
        qp = lin(tokens.numpy(), attn.q_proj)
        kp = lin(rows.numpy(), attn.k_proj)
        vp = lin(rows.numpy(), attn.v_proj)
        expect = np.empty_like(tokens.numpy())
        for i in range(2):
            frame = i  # one group per frame
            # frame-restricted: sole key is the frame's own prompt row
            mixed = vp[frame]
            expect[i] = tokens.numpy()[i] + lin(mixed, attn.out_proj)
        assert np.abs(out - expect).max() < 1e-10

    def test_layout_mismatch(self):
        inject = PromptInjection(8, head_count=2)
        with pytest.raises(DimensionError):
            inject(self.make_tokens(1, 5, 8),
                   torch.zeros(2, 8, dtype=torch.float64))

    def test_shape_preserved(self):
        inject = PromptInjection(8, head_count=4)
        seed_parameters(inject, 14)
        tokens = self.make_tokens(4, 3, 8)
        rows = torch.randn(4, 8, generator=torch_generator(15), dtype=torch.float64)
        assert inject(tokens, rows).shape == tokens.shape
