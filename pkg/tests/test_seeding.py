import subprocess
import sys

from cogevo.seeding import derive_seed, fnv1a_32


def test_fnv1a_reference_vectors():
    # published FNV-1a 32-bit test vectors
    assert fnv1a_32(b"") == 0x811C9DC5
    assert fnv1a_32(b"a") == 0xE40C292C
    assert fnv1a_32(b"foobar") == 0xBF9CF968


def test_derive_seed_distinguishes_types_and_order():
    assert derive_seed(1, "a") != derive_seed("a", 1)
    assert derive_seed(1) != derive_seed("1")
    assert derive_seed("ab", "c") != derive_seed("a", "bc")
    assert 0 <= derive_seed(0, "x") < 2**64


def test_derive_seed_stable_across_processes():
    code = "from cogevo.seeding import derive_seed; print(derive_seed(7, 's1', 3, 'decide'))"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True)
    assert int(out.stdout) == derive_seed(7, "s1", 3, "decide")
