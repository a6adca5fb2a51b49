"""Helpers shared by the test modules."""


def slots_for(model, names):
    """(owner, attribute) pairs locating each named parameter."""
    def setter(name):
        *path, leaf = name.split(".")
        obj = model
        for part in path:
            obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
        return obj, leaf
    return [setter(n) for n in names]


def logits_fn(model, names, images, beams):
    """fn(*tensors) evaluating the model logits with the named parameters swapped in."""
    slots = slots_for(model, names)

    def fn(*tensors):
        for (obj, leaf), t in zip(slots, tensors):
            setattr(obj, leaf, t)
        return model.logits(images, beams)
    return fn


def brute_force_beam(h, vectors):
    """Independent oracle: explicit loops over beams and subcarriers."""
    best, best_p = 0, -1.0
    K = h.shape[0]
    for n in range(vectors.shape[0]):
        acc = 0.0
        for k in range(K):
            s = sum(h[k, m] * vectors[n, m] for m in range(vectors.shape[1]))
            acc += abs(s) ** 2
        acc /= K
        if acc > best_p * (1 + 1e-12):
            best, best_p = n, acc
    return best, best_p


def leakage_oracle(split) -> list[str]:
    """Problems found by brute-force checks of the chronology rules, stream by stream."""
    problems = []
    parts = split.parts()
    seen = {}
    for name, s in parts.items():
        for o in map(tuple, s.origins):
            if o in seen:
                problems.append(f"window {o} is in both {seen[o]} and {name}")
            seen[o] = name
    streams = {o[:2] for o in seen}
    for stream in sorted(streams):
        t0 = {name: [int(o[2]) for o in s.origins if tuple(o[:2]) == stream] for name, s in parts.items()}
        obs = {t + k for t in t0["train"] for k in range(split.p)}
        labels = {t + split.p + k for t in t0["validation"] for k in range(split.f)}
        if labels and obs and max(obs) >= min(labels):
            problems.append(f"stream {stream}: training frame {max(obs)} reaches validation label step {min(labels)}")
        order = [t0[n] for n in ("train", "validation", "test") if t0[n]]
        for a, b in zip(order, order[1:]):
            if max(a) >= min(b):
                problems.append(f"stream {stream}: splits overlap in time")
    return problems
