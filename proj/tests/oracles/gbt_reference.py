#!/usr/bin/env python3
"""Reference gradient-boosting accuracy on a canonical dataset dump.

Consumes the JSONL dump and split file produced by `fbs-audit ingest` so the
feature encoding and train/test partition are byte-identical to what the C++
model sees, fits scikit-learn's GradientBoostingClassifier with the project's
reference hyperparameters, and prints the held-out accuracy. The acceptance
suite freezes this value (minus slack) as the accuracy floor.

Usage:
    python3 gbt_reference.py <dump.jsonl> <split.json>
"""

import json
import sys


def main() -> None:
    dump_path, split_path = sys.argv[1], sys.argv[2]

    records = {}
    schema = None
    with open(dump_path) as f:
        for line in f:
            row = json.loads(line)
            if schema is None:
                schema = list(row["features"].keys())
            records[row["id"]] = (
                [row["features"][k] for k in schema],
                row["label"],
            )

    with open(split_path) as f:
        split = json.load(f)

    import numpy as np
    from sklearn.ensemble import GradientBoostingClassifier
    from sklearn.preprocessing import StandardScaler

    X_train = np.array([records[i][0] for i in split["train"]])
    y_train = np.array([records[i][1] for i in split["train"]])
    X_test = np.array([records[i][0] for i in split["test"]])
    y_test = np.array([records[i][1] for i in split["test"]])

    scaler = StandardScaler().fit(X_train)
    clf = GradientBoostingClassifier(
        n_estimators=100,
        max_depth=4,
        learning_rate=0.1,
        subsample=0.8,
        random_state=42,
    ).fit(scaler.transform(X_train), y_train)

    prob = clf.predict_proba(scaler.transform(X_test))[:, 1]
    acc = float(((prob > 0.5).astype(int) == y_test).mean())
    print(json.dumps({"dataset": split["name"], "seed": split["seed"], "accuracy": acc}))


if __name__ == "__main__":
    main()
