import numpy as np

from freqadapt import verify


def test_fast_suites_pass():
    for check in verify.run_suite("fft") + verify.run_suite("stft") + verify.run_suite("anova"):
        assert check.passed, check.line()


def test_perturbed_kernel_gradient_is_caught():
    def perturb(name, grad):
        return grad + 1e-3 if name.endswith("conv_temp") else grad

    check = verify.check_gradients(seeds=1, perturb=perturb)
    assert not check.passed
    assert check.detail["offending"]
    assert all(name.endswith("conv_temp") for name in check.detail["offending"])


def test_unperturbed_gradients_pass():
    assert verify.check_gradients(seeds=1).passed


def test_literal_transcription_small_case():
    clips = [np.array([[1.0], [0.0], [-1.0], [0.0]]), np.array([[2.0], [0.0], [-2.0], [0.0]])]
    values = verify.literal_discriminability(clips, [0, 1], 1e-8)
    # only bin 1 carries power, and the two classes differ there
    np.testing.assert_allclose(values, [0.0, 1.0, 0.0], atol=1e-12)


def test_check_line_format():
    check = verify.Check(3, "demo", True, {"a": 1})
    assert check.line() == '[PASS] 3. demo: {"a": 1}'
