from roundsim.seeds import derive_seed, make_rng


def test_same_tuple_same_seed():
    a = derive_seed(7, 0, "peer", 0)
    b = derive_seed(7, 0, "peer", 0)
    assert a == b


def test_distinct_entities_distinct_seeds():
    assert derive_seed(5, 0, "peer", 0) != derive_seed(5, 0, "peer", 1)
    assert derive_seed(5, 0, "channel", (0, 1)) != derive_seed(5, 1, "channel", (0, 1))
    assert derive_seed(5, 0, "peer", 3) != derive_seed(5, 0, "channel", 3)
    assert derive_seed(5, 0, "peer", 3) != derive_seed(6, 0, "peer", 3)


def test_no_collisions_over_many_tuples():
    seen = set()
    for test_index in range(10):
        for kind in ("peer", "channel", "engine", "faultPlacement"):
            for entity in range(2500):
                seen.add(derive_seed(99, test_index, kind, entity))
    assert len(seen) == 10 * 4 * 2500


def test_tuple_entity_ids_hash_structurally():
    # (0, 12) and ("0, 12" lookalikes) must not collide by concatenation
    assert derive_seed(1, 0, "channel", (0, 12)) != derive_seed(1, 0, "channel", (1, 2))
    assert derive_seed(1, 0, "channel", (0, 1, "delay")) != \
        derive_seed(1, 0, "channel", (0, 1, "order"))


def test_make_rng_reproducible():
    r1 = make_rng(3, 1, "peer", 4)
    r2 = make_rng(3, 1, "peer", 4)
    assert [r1.random() for _ in range(5)] == [r2.random() for _ in range(5)]
