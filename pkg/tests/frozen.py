"""Reference numbers frozen from the symbolic oracles; tests/test_oracles.py re-derives them."""

# Du of x^{4/3} - y^{4/3} at (1, 1)
ARONSSON_GRAD_11 = (4 / 3, -4 / 3)
# max of |Du|^2 = (16/9)(x^{2/3} + y^{2/3}) over [1, 2]^2, attained at (2, 2)
ARONSSON_SUP_12 = 5.644092629220265
# D(|Du|^2) of the same map at (2, 2)
ARONSSON_GRADSQ_GRAD_22 = (0.9406821048700441, 0.9406821048700441)
# tangential operator of |x|^2/2 at (1, 0)
QUADRATIC_TANGENTIAL_10 = 1.0
# integral of (2x)^2 over [0, 1]
X_SQUARED_ENERGY = 4 / 3
# largest step s with (4/3) s^{-2/3} > 1e6: difference quotients of u_x at x = 0
ARONSSON_INF_STEP = 1.539600717839002e-09
# |x| below which u_xx = (4/9)|x|^{-2/3} exceeds 1e6
ARONSSON_HESS_BLOWUP_X = 2.962962962962963e-10
