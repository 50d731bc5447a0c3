import json

import numpy as np
import pytest

import nncert


def toy_plant():
    A = np.array([[0.7, 0.1], [0.0, 0.8]])
    B = np.array([[0.0], [0.5]])
    return nncert.PlantModel(A=A, B=B, C=np.eye(2))


def toy_network(activation="tanh", bias=False, seed=0):
    rng = np.random.default_rng(seed)
    W0 = np.array([[0.6, -0.4], [0.3, 0.5], [-0.2, 0.7]])
    W1 = np.array([[0.4, -0.3, 0.2], [0.1, 0.5, -0.2]])
    Wout = np.array([[0.3, -0.5]])
    b0 = rng.uniform(-0.1, 0.1, 3) if bias else np.zeros(3)
    b1 = rng.uniform(-0.1, 0.1, 2) if bias else np.zeros(2)
    bout = rng.uniform(-0.1, 0.1, 1) if bias else np.zeros(1)
    return nncert.NeuralNetwork(
        layers=(
            nncert.Layer(W=W0, b=b0, activation=activation),
            nncert.Layer(W=W1, b=b1, activation=activation),
        ),
        W_out=Wout,
        b_out=bout,
    )


def single_layer_network(activation="tanh"):
    W0 = np.array([[0.6, -0.4], [0.3, 0.5], [-0.2, 0.7]])
    Wout = np.array([[0.3, -0.5, 0.2]])
    return nncert.NeuralNetwork(
        layers=(nncert.Layer(W=W0, b=np.zeros(3), activation=activation),),
        W_out=Wout,
        b_out=np.zeros(1),
    )


@pytest.fixture(scope="session")
def plant():
    return toy_plant()


@pytest.fixture(scope="session")
def network():
    return toy_network()


@pytest.fixture(scope="session")
def loop(plant, network):
    steady = nncert.find_steady_state(plant, network)
    return nncert.shift_loop(plant, network, steady)


@pytest.fixture(scope="session")
def toy_bounds(loop):
    boxes = nncert.propagate_boxes(loop, 0.5 * np.ones(3))
    return nncert.local_bounds(loop, boxes)


@pytest.fixture(scope="session")
def pendulum():
    plant, nn = nncert.load_model(nncert.fixture_path("pendulum.json"))
    return plant, nn


@pytest.fixture(scope="session")
def biased_model():
    plant, nn = nncert.load_model(nncert.fixture_path("biased.json"))
    return plant, nn


@pytest.fixture(scope="session")
def toy_certificate(plant, network):
    spec = nncert.MultiplierSpec(kind="diag-c")
    return nncert.certify_at(plant, network, spec, 0.4)


@pytest.fixture()
def toy_model_file(tmp_path):
    plant = toy_plant()
    nn = toy_network()
    payload = {
        "lti": {"A": plant.A.tolist(), "B": plant.B.tolist(),
                "C": plant.C.tolist()},
        "nn": {
            "layers": [
                {"W": layer.W.tolist(), "b": layer.b.tolist(),
                 "activation": layer.activation}
                for layer in nn.layers
            ],
            "W_out": nn.W_out.tolist(),
            "b_out": nn.b_out.tolist(),
        },
    }
    path = tmp_path / "toy.json"
    path.write_text(json.dumps(payload))
    return path
