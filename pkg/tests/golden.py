"""Crystal-frame (D1, D2, b) reference tensors for subsite 1, MHz and MHz/T."""
import numpy as np

Q1_GROUND = np.array([
    [-3.0685, -2.4714, 6.7354],
    [-2.4714, -4.2007, 2.4588],
    [6.7354, 2.4588, -5.1106],
])
# the tabulated matrix is not exactly symmetric: (1,2) reads -0.896, (2,1) -0.8958
M1_GROUND = np.array([
    [3.8330, -0.896, -4.7029],
    [-0.8958, 3.3680, -3.7497],
    [-4.7029, -3.7497, -8.2410],
])
Q1_EXCITED = np.array([
    [4.8095, -1.5956, 13.0154],
    [-1.5956, 4.3611, 7.0101],
    [13.0154, 7.0101, 18.0894],
])
M1_EXCITED = np.array([
    [9.1340, -0.0248, 0.0032],
    [-0.0248, 9.1347, -0.0092],
    [0.0032, -0.0092, 9.0713],
])

GOLDEN = {
    ("ground", "Q"): Q1_GROUND,
    ("ground", "M"): M1_GROUND,
    ("excited", "Q"): Q1_EXCITED,
    ("excited", "M"): M1_EXCITED,
}

# solution families: sign pattern of (g1, g2, g3), ground Q angles, excited Q angles (degrees)
SIGN_TABLE = (
    ((1, 1, 1), (-149.96, 93.88, 124.10), (165.2982, 154.9117, 107.8092)),
    ((-1, 1, 1), (157.85, 95.76, 97.23), (191.8467, 151.8768, 335.2023)),
    ((1, -1, 1), (140.59, -124.22, 88.90), (212.0108, 149.7404, 172.8981)),
    ((1, 1, -1), (-29.90, 53.48, 124.05), (28.1173, 32.8277, 96.0319)),
    ((-1, 1, -1), (39.41, 55.78, 91.10), (327.9892, 30.2596, 352.8981)),
    ((1, -1, -1), (22.14, 84.24, -82.77), (348.2384, 28.0900, 155.1711)),
    ((-1, -1, 1), (-150.10, 126.52, -55.95), (151.8827, 147.1723, 276.0319)),
    ((-1, -1, -1), (-30.04, 86.12, -55.90), (11.5272, 25.0883, 287.8092)),
)
