import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st

from docenhance.diffusion import RestorationModel, TrainOptions, TrainState, train_step
from docenhance.nafnet import NetworkConfig, TimeEmbedding
from docenhance.ocr import (CRNN, Alphabet, CRNNConfig, CTCInfeasibleError, WordBox, batch_ctc, cer,
                            ctc_greedy_decode, ctc_loss, ctc_loss_labels, ctc_loss_torch, extract_word_patches,
                            finetune_step, freeze, levenshtein, pretrain_crnn, recognize, recognizer_cer)
from docenhance.ocr.ctc import min_frames

from _oracles import brute_force_ctc

SMALL = CRNNConfig(height=16, channels=(4, 4, 6, 6), hidden=5, symbols="ab")


# -- text ------------------------------------------------------------------


def test_alphabet_round_trip_and_errors():
    a = Alphabet()
    assert a.size == len(a.symbols) + 1
    assert a.decode(a.encode("hello, world")) == "hello, world"
    assert a.encode("a") == [1]
    with pytest.raises(ValueError):
        a.encode("ABC")
    with pytest.raises(ValueError):
        Alphabet("aa")


@pytest.mark.parametrize("a,b,d", [("", "", 0), ("abc", "", 3), ("kitten", "sitting", 3), ("flaw", "lawn", 2)])
def test_levenshtein_known_values(a, b, d):
    assert levenshtein(a, b) == d


@settings(max_examples=100, deadline=None)
@given(st.text("abc", max_size=6), st.text("abc", max_size=6), st.text("abc", max_size=6))
def test_levenshtein_is_a_metric(a, b, c):
    assert levenshtein(a, b) == levenshtein(b, a)
    assert (levenshtein(a, b) == 0) == (a == b)
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


def test_cer():
    assert cer(["abc", "de"], ["abd", "de"]) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        cer([""], [""])
    with pytest.raises(ValueError):
        cer(["a"], [])


def test_greedy_decode_collapses_and_drops_blanks():
    a = Alphabet("ab")
    frames = [1, 1, 0, 1, 2, 2, 0]
    logits = np.eye(3)[frames]
    assert ctc_greedy_decode(logits, a) == "aab"


def test_word_box_validation():
    with pytest.raises(ValueError):
        WordBox("", (0, 0, 1, 1))
    with pytest.raises(ValueError):
        WordBox("a", (0, 0, 0, 1))
    w = WordBox("ab", (1, 2, 3, 4))
    assert WordBox.from_dict(w.to_dict()) == w
    assert w.fits((6, 4)) and not w.fits((5, 4))


# -- ctc -------------------------------------------------------------------


def _instance(g, K=None, T=None, L=None):
    K = K or int(g.integers(2, 4))
    T = T or int(g.integers(1, 7))
    L = int(g.integers(0, 4)) if L is None else L
    labels = list(g.integers(1, K, L))
    return g.standard_normal((T, K)) * 2, labels


def test_ctc_matches_brute_force_enumeration():
    g = np.random.default_rng(0)
    checked = 0
    while checked < 60:
        scores, labels = _instance(g)
        if min_frames(labels) > scores.shape[0]:
            continue
        loss, _ = ctc_loss_labels(scores, labels)
        logp = scores - np.logaddexp.reduce(scores, axis=1, keepdims=True)
        assert loss == pytest.approx(brute_force_ctc(logp, labels), abs=1e-10)
        checked += 1


def test_ctc_single_frame_values():
    # uniform scores over two classes: one path out of two
    assert ctc_loss_labels(np.zeros((1, 2)), [1])[0] == pytest.approx(np.log(2))
    # two frames, target [1]: paths (1,1), (0,1), (1,0) out of 4
    assert ctc_loss_labels(np.zeros((2, 2)), [1])[0] == pytest.approx(np.log(4 / 3))


def test_ctc_matches_torch_reference():
    g = np.random.default_rng(1)
    for _ in range(20):
        scores, labels = _instance(g, K=5, T=8, L=int(g.integers(1, 4)))
        x = torch.tensor(scores, requires_grad=True)
        lp = F.log_softmax(x, dim=1)
        ref = F.ctc_loss(lp[:, None], torch.tensor([labels]), torch.tensor([8]), torch.tensor([len(labels)]),
                         reduction="sum", zero_infinity=False)
        ref.backward()
        loss, grad = ctc_loss_labels(scores, labels)
        assert loss == pytest.approx(ref.item(), abs=1e-10)
        np.testing.assert_allclose(grad, x.grad.numpy(), atol=1e-10)


def test_ctc_gradient_finite_differences():
    scores = torch.randn(6, 4, dtype=torch.float64, requires_grad=True)
    a = Alphabet("abc")
    assert torch.autograd.gradcheck(lambda s: ctc_loss_torch(s, "aba", a), (scores,), eps=1e-6, atol=1e-8,
                                    rtol=1e-4)


def test_ctc_gradient_rows_sum_to_zero():
    _, grad = ctc_loss(np.random.default_rng(2).standard_normal((7, 4)), "abb", Alphabet("abc"))
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)


def test_ctc_infeasible_and_empty_targets():
    assert min_frames([1, 1, 2]) == 4
    with pytest.raises(CTCInfeasibleError):
        ctc_loss_labels(np.zeros((3, 3)), [1, 1, 2])
    loss, _ = ctc_loss_labels(np.zeros((3, 2)), [])
    assert loss == pytest.approx(3 * np.log(2))


# -- crnn and finetuning -----------------------------------------------------


def test_crnn_shapes():
    m = CRNN(CRNNConfig())
    out = m(torch.ones(2, 1, 32, 40))
    assert out.shape == (2, 10, Alphabet().size)
    assert torch.allclose(out.exp().sum(-1), torch.ones(2, 10), atol=1e-5)
    with pytest.raises(ValueError):
        m(torch.ones(1, 1, 30, 40))


def test_crnn_ctc_stack_gradcheck():
    torch.manual_seed(0)
    m = CRNN(SMALL).double().eval()
    with torch.no_grad():
        for n in m.norms:
            n.running_mean.uniform_(-0.1, 0.1)
            n.running_var.uniform_(0.5, 1.5)
    x = (torch.rand(1, 1, 16, 12, dtype=torch.float64) * 2 - 1).requires_grad_(True)
    fn = lambda inp: ctc_loss_torch(m(inp)[0], "ab", SMALL.alphabet)
    assert torch.autograd.gradcheck(fn, (x,), eps=1e-6, atol=1e-6, rtol=1e-3)


def test_word_patch_extraction():
    img = torch.full((20, 30), 1.0)
    img[2:9, 3:13] = -1.0
    boxes = [WordBox("ab", (3, 2, 10, 7))]
    (p,) = extract_word_patches(img, boxes, height=32, stride=4)
    assert p.shape[0] == 32 and p.shape[1] % 4 == 0
    assert float(p[:, :40].max()) == pytest.approx(-1.0)  # crop is all ink
    with pytest.raises(ValueError):
        extract_word_patches(img, [WordBox("ab", (25, 2, 10, 7))])
    # narrow box padded to the CTC minimum frame count
    (q,) = extract_word_patches(img, [WordBox("aaaa", (0, 0, 2, 16))], 32, 4, Alphabet())
    assert q.shape[1] // 4 >= min_frames(Alphabet().encode("aaaa"))


def test_word_patches_are_differentiable():
    img = torch.zeros(16, 16, requires_grad=True)
    (p,) = extract_word_patches(img, [WordBox("a", (2, 2, 5, 7))])
    p.sum().backward()
    assert img.grad[2:9, 2:7].abs().sum() > 0
    assert img.grad[10:, 10:].abs().sum() == 0


def _tiny_state(seed=0):
    torch.manual_seed(0)
    cfg = NetworkConfig(width=4, enc_blocks=(1,), dec_blocks=(1,))
    dcfg = NetworkConfig(width=4, enc_blocks=(1,), dec_blocks=(1,), in_channels=2)
    return TrainState.create(RestorationModel(cfg, dcfg, TimeEmbedding(8, 8)), seed, TrainOptions(lr=1e-3))


def test_finetune_without_words_equals_train_step(sched):
    g = torch.Generator().manual_seed(0)
    x, y = torch.rand(2, 1, 8, 8, generator=g) * 2 - 1, torch.rand(2, 1, 8, 8, generator=g) * 2 - 1
    a, b = _tiny_state(3), _tiny_state(3)
    _, ra = train_step((x, y), a, sched)
    _, rb = finetune_step((x, y, [[], []]), b, sched, CRNN())
    assert ra.as_dict() == rb.as_dict()
    assert all(torch.equal(p, q) for p, q in zip(a.model.parameters(), b.model.parameters()))
    with pytest.raises(ValueError):
        finetune_step((x, y, [[]]), b, sched, CRNN())


def test_finetune_keeps_recognizer_frozen(sched):
    torch.manual_seed(1)
    crnn = CRNN()
    snapshot = {k: v.clone() for k, v in crnn.state_dict().items()}
    x = torch.ones(1, 1, 16, 16)
    x[0, 0, 4:11, 2:13] = -1
    words = [[WordBox("ab", (2, 4, 11, 7))]]
    st = _tiny_state()
    _, rep = finetune_step((x, x.clone(), words), st, sched, crnn)
    assert rep.l_ctc is not None and np.isfinite(float(rep.l_ctc))
    assert all(torch.equal(v, crnn.state_dict()[k]) for k, v in snapshot.items())
    assert all(not p.requires_grad for p in freeze(crnn).parameters())


def test_pretraining_learns_a_tiny_vocabulary():
    from docenhance.data.render import render_text_image
    words = ["ab", "ba", "aab", "bba", "a", "b", "abab", "bab"]
    data = []
    for w in words:
        img, boxes = render_text_image([w], (9, 6 * len(w) + 2))
        (p,) = extract_word_patches(torch.tensor(img, dtype=torch.float32), boxes, 16, 4, SMALL.alphabet)
        data.append((p.numpy(), w))
    before = recognizer_cer(CRNN(SMALL), data)
    model = pretrain_crnn(data, 60, SMALL, lr=1e-2, batch_size=8, seed=0)
    assert recognizer_cer(model, data) < before
    assert recognize(model, [torch.tensor(data[0][0])])[0] in {w for w in words} | {""}
    with pytest.raises(ValueError):
        pretrain_crnn([(data[0][0], "xyz")], 1, SMALL)


def test_batch_ctc_scores_each_word_on_its_own_frames():
    torch.manual_seed(0)
    m = CRNN(SMALL).eval()
    p1, p2 = -torch.ones(16, 8), torch.ones(16, 16)
    got = batch_ctc(m, [p1, p2], ["a", "ab"])
    logp = m(torch.stack([F.pad(p1, (0, 8), value=1.0), p2])[:, None])
    want = (ctc_loss_torch(logp[0, :2], "a", SMALL.alphabet) + ctc_loss_torch(logp[1, :4], "ab", SMALL.alphabet)) / 2
    assert got.item() == pytest.approx(want.item(), rel=1e-6)
