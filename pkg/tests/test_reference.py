import pytest
import torch

from motiondiff.reference import ReferenceNet, flatten_kv, mask_features, unflatten_kv


@pytest.fixture(scope="module")
def refnet(tiny_cfg):
    torch.manual_seed(0)
    return ReferenceNet(tiny_cfg)


def test_site_shapes_match_config(tiny_cfg, refnet):
    feats = refnet(torch.randn(2, 3, 32, 32))
    sites = {name: (res, c) for name, res, c in tiny_cfg.attention_sites()}
    assert set(feats) == set(sites)
    for name, fmap in feats.items():
        res, c = sites[name]
        assert fmap.shape == (2, c, res, res)


def test_extraction_deterministic(refnet):
    img = torch.randn(1, 3, 32, 32)
    with torch.no_grad():
        a = refnet(img)
        b = refnet(img)
    for name in a:
        assert torch.equal(a[name], b[name])


def test_mask_ratio_zero_is_identity(refnet):
    feats = refnet(torch.randn(1, 3, 32, 32))
    out = mask_features(feats, 0.0, refnet.mask_embeddings, seed=1)
    for name in feats:
        assert torch.equal(out[name], feats[name])


# Exact masked-position counts: floor(ratio * H * W), per site.
@pytest.mark.parametrize("ratio", [0.3, 0.5, 1.0])
def test_mask_count_exact(refnet, ratio):
    feats = refnet(torch.randn(2, 3, 32, 32))
    out = mask_features(feats, ratio, refnet.mask_embeddings, seed=0)
    for name, fmap in out.items():
        h, w = fmap.shape[-2:]
        emb = refnet.mask_embeddings[name].detach()
        flat = fmap.detach().flatten(2)  # (b, c, hw)
        hits = (flat == emb[None, :, None]).all(dim=1).sum(dim=1)
        expected = int(ratio * h * w)
        assert (hits == expected).all(), (name, hits, expected)


def test_mask_full_replaces_everything(refnet):
    feats = refnet(torch.randn(1, 3, 32, 32))
    out = mask_features(feats, 1.0, refnet.mask_embeddings, seed=0)
    for name, fmap in out.items():
        emb = refnet.mask_embeddings[name].detach()
        assert torch.allclose(
            fmap.detach(), emb[None, :, None, None].expand_as(fmap)
        )


def test_mask_deterministic_given_seed(refnet):
    feats = refnet(torch.randn(1, 3, 32, 32))
    a = mask_features(feats, 0.3, refnet.mask_embeddings, seed=42)
    b = mask_features(feats, 0.3, refnet.mask_embeddings, seed=42)
    for name in a:
        assert torch.equal(a[name], b[name])


def test_mask_rejects_bad_ratio(refnet):
    feats = refnet(torch.randn(1, 3, 32, 32))
    with pytest.raises(ValueError):
        mask_features(feats, 1.2, refnet.mask_embeddings)


def test_flatten_unflatten_roundtrip(refnet):
    feats = refnet(torch.randn(2, 3, 32, 32))
    name = next(iter(feats))
    fmap = feats[name]
    tokens = flatten_kv(feats, name)
    b, c, h, w = fmap.shape
    assert tokens.shape == (b, h * w, c)
    # row-major: token index = y * w + x
    assert torch.equal(tokens[0, 1 * w + 2], fmap[0, :, 1, 2])
    assert torch.equal(unflatten_kv(tokens, h, w), fmap)


def test_flatten_unknown_site(refnet):
    feats = refnet(torch.randn(1, 3, 32, 32))
    with pytest.raises(KeyError):
        flatten_kv(feats, "nope")
