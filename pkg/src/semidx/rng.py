"""Portable deterministic random source.

Negative mining must produce identical choices from any runtime that reads
the same index files (the in-process bindings replay it), so it cannot rely
on a host language's default generator.  SplitMix64 is tiny, well studied,
and exactly reproducible with 64-bit integer arithmetic.
"""

_MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def randrange(self, n: int) -> int:
        """Uniform-ish integer in [0, n). Modulo bias is irrelevant at the
        corpus sizes this engine targets and keeps the port trivial."""
        if n <= 0:
            raise ValueError("randrange needs n > 0")
        return self.next_u64() % n
