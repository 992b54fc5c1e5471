#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "dtd/autodiff.hpp"
#include "dtd/rng.hpp"
#include "dtd/tensor.hpp"
#include "test_util.hpp"

using dtd::Rng;
using dtd::Tensor;
using dtd::ad::AdamConfig;
using dtd::ad::NodeId;
using dtd::ad::ParamStore;
using dtd::ad::Tape;

TEST_CASE("identity graph returns its input") {
    Tape tape;
    NodeId x = tape.input(Tensor::row({1, 2, 3}));
    CHECK(tape.value(x) == Tensor::row({1, 2, 3}));
}

TEST_CASE("matmul by the identity is the identity map") {
    Rng rng(5);
    Tape tape;
    NodeId i3 = tape.constant(Tensor::identity(3));
    for (int rep = 0; rep < 5; ++rep) {
        Tensor v = rng.normal_tensor({3, 1});
        NodeId out = tape.matmul(i3, tape.constant(v));
        for (int i = 0; i < 3; ++i) CHECK(tape.value(out)[i] == v[i]);
    }
}

TEST_CASE("softmax of [0,0] is [0.5,0.5] and rows sum to one") {
    Tape tape;
    NodeId s = tape.softmax(tape.constant(Tensor::row({0, 0})));
    CHECK(tape.value(s)[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(tape.value(s)[1] == doctest::Approx(0.5).epsilon(1e-15));

    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        Tape t2;
        NodeId y = t2.softmax(t2.constant(rng.normal_tensor({4, 7}, 3.0)));
        const Tensor& v = t2.value(y);
        for (int r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (int c = 0; c < 7; ++c) {
                CHECK(v.at(r, c) >= 0.0);
                sum += v.at(r, c);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("d(x^2)/dx at 3 is 6") {
    Tape tape;
    NodeId x = tape.input(Tensor::scalar(3.0));
    NodeId y = tape.mul(x, x);
    tape.backward(y);
    CHECK(tape.grad(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("relu subgradient is 0 on the negative side") {
    Tape tape;
    NodeId x = tape.input(Tensor::row({-1, 2}));
    NodeId y = tape.sum(tape.relu(x));
    tape.backward(y);
    CHECK(tape.grad(x)[0] == 0.0);
    CHECK(tape.grad(x)[1] == 1.0);
}

TEST_CASE("backward requires a completed forward and matching seed shape") {
    Tape tape;
    CHECK_THROWS(tape.backward(0));  // nothing evaluated yet
    NodeId x = tape.input(Tensor::row({1, 2}));
    CHECK_THROWS(tape.backward(x));  // non-scalar root without output gradient
    CHECK_THROWS(tape.backward(x, Tensor::row({1, 2, 3})));
    CHECK_THROWS(tape.grad(x));  // gradient before any backward
}

TEST_CASE("shape mismatches are rejected with the op named") {
    Tape tape;
    NodeId a = tape.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    NodeId b = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(tape.add(a, b), doctest::Contains("add"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(tape.concat(a, b, 0), doctest::Contains("concat"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(tape.slice(a, 0, 1, 5), doctest::Contains("slice"), std::invalid_argument);
    CHECK_THROWS(tape.log(tape.constant(Tensor::scalar(-1.0))));
    CHECK_THROWS(tape.sqrt(tape.constant(Tensor::scalar(-1.0))));
}

namespace {

// Worst finite-difference error for a primitive wrapped into a scalar root
// via a fixed random projection (so every output element matters).
double primitive_fd_error(const test_util::ScalarGraph& op, const Tensor& x, Rng& rng) {
    // project output to scalar with fixed weights
    dtd::ad::Tape probe;
    const Tensor probe_out = probe.value(op(probe, probe.input(x)));
    const Tensor w = rng.normal_tensor(probe_out.shape());
    auto build = [&, w](Tape& tape, NodeId in) {
        NodeId out = op(tape, in);
        return tape.sum(tape.mul(out, tape.constant(w)));
    };
    return test_util::input_gradient_error(build, x);
}

}  // namespace

TEST_CASE("every primitive passes the finite-difference gradient check") {
    Rng rng(17);
    for (int seed = 0; seed < 20; ++seed) {
        Rng r = rng.split(static_cast<std::uint64_t>(seed));
        const Tensor x = r.normal_tensor({3, 4});
        const Tensor x_pos = [&] {
            Tensor t = r.normal_tensor({3, 4});
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.5 + std::abs(t[i]);
            return t;
        }();
        // inputs away from the relu kink so central differences are clean
        const Tensor x_off = [&] {
            Tensor t = r.normal_tensor({3, 4});
            for (std::size_t i = 0; i < t.size(); ++i) {
                if (std::abs(t[i]) < 1e-3) t[i] = t[i] < 0 ? -1e-3 : 1e-3;
            }
            return t;
        }();
        const Tensor m = r.normal_tensor({4, 2});
        const Tensor v34 = r.normal_tensor({3, 4});
        const Tensor row = r.normal_tensor({1, 4});
        const Tensor col = r.normal_tensor({3, 1});

        auto chk = [&](const char* name, const test_util::ScalarGraph& op, const Tensor& in) {
            const double err = primitive_fd_error(op, in, r);
            INFO(name << " seed " << seed << " err " << err);
            CHECK(err < 1e-4);
        };

        chk("matmul", [&](Tape& t, NodeId a) { return t.matmul(a, t.constant(m)); }, x);
        chk("add", [&](Tape& t, NodeId a) { return t.add(a, t.constant(v34)); }, x);
        chk("add-row-bcast", [&](Tape& t, NodeId a) { return t.add(a, t.constant(row)); }, x);
        chk("add-col-bcast", [&](Tape& t, NodeId a) { return t.add(a, t.constant(col)); }, x);
        chk("add-scalar-bcast",
            [&](Tape& t, NodeId a) { return t.add(a, t.constant(Tensor::scalar(0.7))); }, x);
        chk("add-small-side", [&](Tape& t, NodeId a) { return t.add(t.constant(v34), a); },
            row);
        chk("sub", [&](Tape& t, NodeId a) { return t.sub(a, t.constant(v34)); }, x);
        chk("sub-rhs", [&](Tape& t, NodeId a) { return t.sub(t.constant(v34), a); }, x);
        chk("sub-col-bcast", [&](Tape& t, NodeId a) { return t.sub(a, t.constant(col)); }, x);
        chk("mul", [&](Tape& t, NodeId a) { return t.mul(a, t.constant(v34)); }, x);
        chk("mul-row-bcast", [&](Tape& t, NodeId a) { return t.mul(a, t.constant(row)); }, x);
        chk("mul-col-small-side", [&](Tape& t, NodeId a) { return t.mul(t.constant(v34), a); },
            col);
        chk("scale", [&](Tape& t, NodeId a) { return t.scale(a, -1.37); }, x);
        chk("relu", [&](Tape& t, NodeId a) { return t.relu(a); }, x_off);
        chk("tanh", [&](Tape& t, NodeId a) { return t.tanh(a); }, x);
        chk("sigmoid", [&](Tape& t, NodeId a) { return t.sigmoid(a); }, x);
        chk("softmax", [&](Tape& t, NodeId a) { return t.softmax(a); }, x);
        chk("exp", [&](Tape& t, NodeId a) { return t.exp(a); }, x);
        chk("log", [&](Tape& t, NodeId a) { return t.log(a); }, x_pos);
        chk("sqrt", [&](Tape& t, NodeId a) { return t.sqrt(a); }, x_pos);
        chk("sum", [&](Tape& t, NodeId a) { return t.sum(a); }, x);
        chk("mean", [&](Tape& t, NodeId a) { return t.mean(a); }, x);
        chk("squared-l2", [&](Tape& t, NodeId a) { return t.squared_l2(a); }, x);
        chk("concat0",
            [&](Tape& t, NodeId a) { return t.concat(a, t.constant(v34), 0); }, x);
        chk("concat1",
            [&](Tape& t, NodeId a) { return t.concat(t.constant(v34), a, 1); }, x);
        chk("slice0", [&](Tape& t, NodeId a) { return t.slice(a, 0, 1, 2); }, x);
        chk("slice1", [&](Tape& t, NodeId a) { return t.slice(a, 1, 1, 3); }, x);
        chk("transpose", [&](Tape& t, NodeId a) { return t.transpose(a); }, x);
        chk("reshape", [&](Tape& t, NodeId a) { return t.reshape(a, {4, 3}); }, x);
    }
}

TEST_CASE("random 3-layer mlp matches finite differences on every parameter") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(900 + seed);
        ParamStore store;
        store.create("w1", rng.normal_tensor({4, 8}, 0.5));
        store.create("b1", rng.normal_tensor({1, 8}, 0.1));
        store.create("w2", rng.normal_tensor({8, 8}, 0.5));
        store.create("b2", rng.normal_tensor({1, 8}, 0.1));
        store.create("w3", rng.normal_tensor({8, 2}, 0.5));
        store.create("b3", rng.normal_tensor({1, 2}, 0.1));
        const Tensor x = rng.normal_tensor({3, 4});
        const Tensor target = rng.normal_tensor({3, 2});

        auto forward = [&](Tape& tape) {
            NodeId h1 = tape.tanh(tape.add(tape.matmul(tape.constant(x), tape.param("w1")),
                                           tape.param("b1")));
            NodeId h2 = tape.tanh(tape.add(tape.matmul(h1, tape.param("w2")), tape.param("b2")));
            NodeId out = tape.add(tape.matmul(h2, tape.param("w3")), tape.param("b3"));
            return tape.squared_l2(tape.sub(out, tape.constant(target)));
        };
        const double err = test_util::param_gradient_error(
            store,
            [&] {
                Tape t(&store);
                return t.scalar(forward(t));
            },
            [&] {
                Tape t(&store);
                t.backward(forward(t));
            });
        INFO("seed " << seed << " err " << err);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("gradients accumulate across multiple parameter uses") {
    ParamStore store;
    store.create("w", Tensor::scalar(2.0));
    Tape tape(&store);
    NodeId w = tape.param("w");
    NodeId y = tape.add(tape.mul(w, w), w);  // y = w^2 + w, dy/dw = 2w + 1 = 5
    store.zero_grad();
    tape.backward(y);
    CHECK(store.grad("w")[0] == doctest::Approx(5.0));

    // without zeroing, a second backward doubles the accumulator
    tape.backward(y);
    CHECK(store.grad("w")[0] == doctest::Approx(10.0));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamStore store;
    store.create("w", Tensor::row({1.0, -2.0}));
    store.zero_grad();
    store.adam_step({0.1, 0.9, 0.999, 1e-8});
    CHECK(store.value("w")[0] == 1.0);
    CHECK(store.value("w")[1] == -2.0);
}

TEST_CASE("adam: first step moves by about lr * sign(g)") {
    ParamStore store;
    store.create("w", Tensor::row({1.0, 1.0, 1.0}));
    store.zero_grad();
    store.grad("w")[0] = 0.3;
    store.grad("w")[1] = -7.0;
    store.grad("w")[2] = 1e-3;
    const double lr = 0.05;
    store.adam_step({lr, 0.9, 0.999, 1e-8});
    CHECK(store.value("w")[0] == doctest::Approx(1.0 - lr).epsilon(1e-4));
    CHECK(store.value("w")[1] == doctest::Approx(1.0 + lr).epsilon(1e-4));
    CHECK(store.value("w")[2] == doctest::Approx(1.0 - lr).epsilon(1e-2));
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
    ParamStore store;
    store.create("w", Tensor::scalar(1.0));
    store.zero_grad();
    store.grad("w")[0] = std::nan("");
    CHECK_THROWS_WITH_AS(store.adam_step({}), doctest::Contains("w"), std::runtime_error);
}

TEST_CASE("adam drives a quadratic bowl to the origin") {
    ParamStore store;
    store.create("x", Tensor::row({1.0, 1.0}));
    for (int step = 0; step < 200; ++step) {
        Tape tape(&store);
        NodeId loss = tape.squared_l2(tape.param("x"));
        store.zero_grad();
        tape.backward(loss);
        store.adam_step({0.05, 0.9, 0.999, 1e-8});
    }
    const Tensor& x = store.value("x");
    CHECK(std::sqrt(x[0] * x[0] + x[1] * x[1]) < 1e-2);
}

TEST_CASE("evaluation is deterministic given identical seed and inputs") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        ParamStore store;
        store.create("w", rng.normal_tensor({6, 6}));
        Tape tape(&store);
        NodeId out = tape.softmax(tape.matmul(tape.constant(rng.normal_tensor({4, 6})),
                                              tape.param("w")));
        return tape.value(out);
    };
    CHECK(run(123) == run(123));   // bit-identical
    CHECK_FALSE(run(123) == run(124));
}
