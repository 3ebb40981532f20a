"""Portable hashing and pseudo-random numbers.

FNV-1a-64 and SplitMix64 are both a handful of integer operations, which keeps
seeds and samples bit-identical on every platform and Python version.
"""

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data):
    """FNV-1a 64-bit hash of ``data`` (bytes, or str encoded as UTF-8)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


def stable_seed(global_seed, diagram_id, variant_name):
    """Seed for one (diagram, variant) pair derived from the global seed."""
    if not 0 <= int(global_seed) <= _MASK:
        raise ValueError("global_seed must be an unsigned 64-bit integer")
    return fnv1a_64(f"{int(global_seed)}|{diagram_id}|{variant_name}")


class SplitMix64:
    """SplitMix64 generator.

    >>> rng = SplitMix64(0)
    >>> hex(rng.next_u64())
    '0xe220a8397b1dcdaf'
    """

    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def random(self):
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, low, high):
        return low + (high - low) * self.random()

    def randbelow(self, n):
        """Integer in [0, n); modulo bias is below 2**-50 for the sizes used here."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle; returns ``items`` for chaining."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample(self, items, k):
        """``k`` distinct elements drawn without replacement, in draw order."""
        pool = list(items)
        k = min(k, len(pool))
        # partial Fisher-Yates from the front
        for i in range(k):
            j = i + self.randbelow(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
