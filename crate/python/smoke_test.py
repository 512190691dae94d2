"""Smoke test for the hostility extension module.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""

import math
import tempfile

import hostility


def main():
    assert hostility.clean_text("देखो @user https://t.co/x 😀 #ट्रेंड सच?") == "देखो http सच?"
    assert math.isclose(hostility.bce(0.0, True), math.log(2))
    assert hostility.weighted_f1([True, True, False, False], [True, True, False, False]) == 1.0
    w = hostility.weighted_fine_grained([0.8, 0.6, 0.4, 0.2], [1, 1, 1, 1])
    assert math.isclose(w, 0.5)
    assert hostility.aux_fuse([0.1, 0.2], 3.0) == [0.1, 0.2, 3.0]
    assert hostility.mtl_loss(0.0, [5.0, 5.0, 5.0, 5.0], (False,) * 5) == hostility.bce(0.0, False)
    try:
        hostility.mtl_loss(0.0, [0.0] * 4, (False, True, False, False, False))
    except hostility.HostilityError:
        pass
    else:
        raise AssertionError("fine flag without hostile should be rejected")

    corpus = hostility.Corpus.synthetic(posts=200, seed=3).cleaned()
    stats = corpus.label_stats()
    assert stats["total"] == 200 == stats["hostile"] + stats["non_hostile"]
    train, validation, test = corpus.split(seed=3)
    assert len(train) + len(validation) + len(test) == 200
    assert not set(train.ids) & set(test.ids)

    config = {"strategy": "AUX", "learning_rate": 1e-3, "epochs": 3, "seed": 1,
              "encoder": {"width": 16, "heads": 2, "ff_width": 32}}
    model = hostility.Model.train(config, train, validation)
    assert model.strategy == "AUX"
    preds = model.predict(test)
    assert len(preds) == len(test)
    for p in preds:
        assert 0.0 <= p["coarse"] <= 1.0
        if not p["labels"]["hostile"]:
            assert not any(p["labels"][k] for k in ("fake", "hate", "offensive", "defamation"))

    report = model.evaluate(test)
    with tempfile.TemporaryDirectory() as d:
        model.save(d)
        again = hostility.Model.load(d).evaluate(test)
    assert report == again, (report, again)
    print("hostile F1 %.3f, weighted fine-grained %.3f" % (report["hostile"], report["weighted"]))
    print("smoke test passed")


if __name__ == "__main__":
    main()
