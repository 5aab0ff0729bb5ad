"""Regenerate the committed fixture models and datasets.

Uses scikit-learn's bundled 8x8 digits data, so no download is needed.
Outputs (all in this directory):

  mnist1_fixture.json   64 -> 10 softmax
  mnist2_fixture.json   64 -> 32 -> 16 -> 10 relu, relu, softmax
  micro_fixture.json    12 -> 10 softmax (2x2-pooled centre crop)
  digits_test.csv       500 held-out rows, 64 features
  micro_test.csv        same rows, 12 pooled features
  golden.json           float accuracies and first-5-sample pre-activations

Only guaranteed to reproduce byte-identical files for a fixed
scikit-learn / numpy version; the committed files are canonical.
"""
import json
import os

import numpy as np
from sklearn.datasets import load_digits
from sklearn.linear_model import LogisticRegression
from sklearn.neural_network import MLPClassifier

HERE = os.path.dirname(os.path.abspath(__file__))
SEED = 0
N_TEST = 500


def pool_micro(x):
    img = x.reshape(-1, 8, 8)[:, :, 1:7]
    pooled = img.reshape(-1, 4, 2, 3, 2).mean(axis=(2, 4))
    return pooled.reshape(-1, 12)


def layer(w, b, act):
    return {
        "weights": [[float(v) for v in row] for row in w],
        "bias": [float(v) for v in b],
        "activation": act,
    }


def write_model(name, layers):
    with open(os.path.join(HERE, name), "w", newline="\n") as fh:
        json.dump({"format": "quboround-model", "version": 1, "layers": layers}, fh)
        fh.write("\n")


def write_csv(name, x, y):
    with open(os.path.join(HERE, name), "w", newline="\n") as fh:
        fh.write("label," + ",".join(f"f{i}" for i in range(x.shape[1])) + "\n")
        for row, label in zip(x, y):
            fh.write(str(int(label)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def forward(layers, x):
    pre = []
    h = x
    for l in layers:
        y = h @ np.array(l["weights"]).T + np.array(l["bias"])
        pre.append(y)
        if l["activation"] == "relu":
            h = np.maximum(y, 0.0)
        elif l["activation"] == "softmax":
            e = np.exp(y - y.max(axis=1, keepdims=True))
            h = e / e.sum(axis=1, keepdims=True)
        else:
            h = y
    return pre, h


def main():
    digits = load_digits()
    x = digits.data.astype(np.float64)
    y = digits.target.astype(np.int64)
    order = np.random.default_rng(SEED).permutation(len(y))
    test_idx, train_idx = order[:N_TEST], order[N_TEST:]
    xtr, ytr, xte, yte = x[train_idx], y[train_idx], x[test_idx], y[test_idx]

    lr = LogisticRegression(max_iter=5000, C=0.05, random_state=SEED).fit(xtr, ytr)
    mnist1 = [layer(lr.coef_, lr.intercept_, "softmax")]

    mlp = MLPClassifier(hidden_layer_sizes=(32, 16), max_iter=800, random_state=SEED).fit(xtr, ytr)
    acts = ["relu", "relu", "softmax"]
    mnist2 = [layer(w.T, b, a) for w, b, a in zip(mlp.coefs_, mlp.intercepts_, acts)]

    mtr, mte = pool_micro(xtr), pool_micro(xte)
    lr_micro = LogisticRegression(max_iter=5000, C=0.05, random_state=SEED).fit(mtr, ytr)
    micro = [layer(lr_micro.coef_, lr_micro.intercept_, "softmax")]

    write_model("mnist1_fixture.json", mnist1)
    write_model("mnist2_fixture.json", mnist2)
    write_model("micro_fixture.json", micro)
    write_csv("digits_test.csv", xte, yte)
    write_csv("micro_test.csv", mte, yte)

    golden = {"accuracy": {}, "mnist1_batch": {}}
    for name, layers, data in [
        ("mnist1", mnist1, xte),
        ("mnist2", mnist2, xte),
        ("micro", micro, mte),
    ]:
        _, out = forward(layers, data)
        golden["accuracy"][name] = float((out.argmax(axis=1) == yte).mean())
    pre, out = forward(mnist1, xte[:5])
    golden["mnist1_batch"] = {
        "rows": [0, 1, 2, 3, 4],
        "pre_activations": [[float(v) for v in r] for r in pre[0]],
        "predictions": [int(v) for v in out.argmax(axis=1)],
    }
    with open(os.path.join(HERE, "golden.json"), "w", newline="\n") as fh:
        json.dump(golden, fh, indent=1)
        fh.write("\n")
    print(json.dumps(golden["accuracy"]))


if __name__ == "__main__":
    main()
