# Produced by scripts/compute_oracles.py (mpmath, 40 digits). Do not edit by hand.
RELU_PROB_1_1 = 0.84134474606854294859
RELU_M1_1_1 = 1.0833154705876862984
RELU_M2_1_1 = 1.924660216656229247
RELU_M2_1_2 = 4.1614429598986644737

RELU_CROSS = {
    (0.5, 1.0, 1.0): 1.5361126627429787417,
    (0.9, 0.3, -0.4): 0.37937408760250325178,
    (-0.7, 1.5, 0.2): 0.40756110521370352312,
    (0.999, 1.0, 1.0): 1.9238217499488453966,
    (0.2, -2.0, 0.5): 0.0094230585414241390548,
    (-1.0, 0.3, 0.7): 0.063648912559350335238,
}

# constant solution of the LV fixed-point system, wigner alpha = 0.2, r = 1
WIGNER_FP = {
    1000: (0.52330728392427768147, 0.31823312784955001906),
    2000: (0.52394890524519413525, 0.31845387413354177924),
}

# (1.1) * (2 sqrt(0.1998) + 6 / sqrt(log 1.1) * sqrt(0.0002 log 1000))
NORM_BOUND_WIGNER = 1.7779946847986812669

W2_FOUR_A = [0.3, -1.2, 2.5, 0.0]
W2_FOUR_B = [1.0, 0.7, -0.4, 3.1]
W2_FOUR = 0.7035623639735144249
