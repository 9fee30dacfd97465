#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tdyn/dataset.hpp"
#include "tdyn/sim.hpp"

using namespace tdyn;
using namespace tdyn::sim;
namespace fs = std::filesystem;

namespace {

ObjectSpec box_spec(double mass, int half = 6, double weight = 1.0) {
    ObjectSpec s;
    s.id = 0;
    s.mass = mass;
    s.restitution = 0.93;
    s.grip_offset = {0.01, -0.02, 0.05};
    s.footprint = Tensor({kSensorDim, kSensorDim});
    for (int r = 16 - half; r < 16 + half; ++r) {
        for (int c = 16 - half; c < 16 + half; ++c) {
            s.footprint.at3(0, r, c, kSensorDim, kSensorDim) = weight;
        }
    }
    return s;
}

// Trapezoid consistency: (q[k+1]-q[k])/dt == (v[k]+v[k+1])/2 except across
// impulsive frames.
void check_velocity_consistency(const Episode& ep) {
    for (std::int64_t k = 0; k + 1 < ep.size(); ++k) {
        if (ep.labels[static_cast<std::size_t>(k + 1)] >=
            static_cast<std::uint8_t>(Phase::Impact)) {
            continue;
        }
        const auto& a = ep.states[static_cast<std::size_t>(k)];
        const auto& b = ep.states[static_cast<std::size_t>(k + 1)];
        const Vec3 fd_hand = (b.q_hand - a.q_hand) * (1.0 / ep.dt);
        const Vec3 mid_hand = (a.v_hand + b.v_hand) * 0.5;
        CHECK(std::abs(fd_hand.x - mid_hand.x) < 1e-6);
        CHECK(std::abs(fd_hand.y - mid_hand.y) < 1e-6);
        CHECK(std::abs(fd_hand.z - mid_hand.z) < 1e-6);
        const Vec3 fd_obj = (b.q_obj - a.q_obj) * (1.0 / ep.dt);
        const Vec3 mid_obj = (a.v_obj + b.v_obj) * 0.5;
        CHECK(std::abs(fd_obj.x - mid_obj.x) < 1e-6);
        CHECK(std::abs(fd_obj.y - mid_obj.y) < 1e-6);
        CHECK(std::abs(fd_obj.z - mid_obj.z) < 1e-6);
    }
}

struct FlightRun {
    std::int64_t first = 0;  // index of the state opening the ballistic arc
    std::int64_t last = 0;   // last in-flight state
};

std::vector<FlightRun> flight_runs(const Episode& ep) {
    std::vector<FlightRun> runs;
    const auto t = ep.size();
    std::int64_t k = 1;
    while (k < t) {
        if (ep.labels[static_cast<std::size_t>(k)] == static_cast<std::uint8_t>(Phase::Flight)) {
            FlightRun run;
            run.first = k - 1;
            while (k < t && ep.labels[static_cast<std::size_t>(k)] ==
                                static_cast<std::uint8_t>(Phase::Flight)) {
                ++k;
            }
            run.last = k - 1;
            runs.push_back(run);
        } else {
            ++k;
        }
    }
    return runs;
}

double specific_energy(const SystemState& s) {
    return 0.5 * s.v_obj.dot(s.v_obj) + kGravity * s.q_obj.z;
}

} // namespace

TEST_CASE("wave: object is rigidly attached at the grip offset") {
    const auto spec = box_spec(0.5);
    const auto ep = gen_wave(spec, 5.0, 42);
    for (const auto& st : ep.states) {
        // Exact equality: the object position is literally hand + grip.
        CHECK(st.q_obj.x == st.q_hand.x + spec.grip_offset.x);
        CHECK(st.q_obj.y == st.q_hand.y + spec.grip_offset.y);
        CHECK(st.q_obj.z == st.q_hand.z + spec.grip_offset.z);
        CHECK(st.v_obj.x == st.v_hand.x);
    }
    for (const auto lbl : ep.labels) {
        CHECK(lbl == static_cast<std::uint8_t>(Phase::Contact));
    }
}

TEST_CASE("wave: stationary hand reads the static weight, proportional to mass") {
    const WaveTuning still{0.0};
    const auto light = box_spec(0.25, 8);
    const auto heavy = box_spec(0.5, 8);
    const auto ep1 = gen_wave(light, 5.0, 7, still);
    const auto ep2 = gen_wave(heavy, 5.0, 7, still);
    // Hand is exactly stationary.
    for (const auto& st : ep1.states) {
        CHECK(st.v_hand.norm() == 0.0);
        CHECK(st.q_hand.z == ep1.states[0].q_hand.z);
    }
    auto signal = [](const Episode& ep) {
        double s = 0.0;
        for (const auto& f : ep.frames) s += f.sum();
        s /= static_cast<double>(ep.frames.size());
        return s - static_cast<double>(kSensorDim * kSensorDim) * noise_floor();
    };
    const double s1 = signal(ep1);
    const double s2 = signal(ep2);
    // F = m * (grip factor + 1) * g, so the frame sum scales with mass.
    const double expected1 = kSensitivity * light.mass * (kGripFactor + 1.0) * kGravity;
    CHECK(s1 == doctest::Approx(expected1).epsilon(0.03));
    CHECK(s1 / s2 == doctest::Approx(light.mass / heavy.mass).epsilon(0.03));
}

TEST_CASE("wave: different seeds give different paths, same invariants") {
    const auto spec = box_spec(0.6);
    const auto a = gen_wave(spec, 5.0, 1);
    const auto b = gen_wave(spec, 5.0, 2);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < a.states.size(); ++i) {
        max_diff = std::max(max_diff, (a.states[i].q_hand - b.states[i].q_hand).norm());
    }
    CHECK(max_diff > 0.01);
    check_velocity_consistency(a);
    check_velocity_consistency(b);
}

TEST_CASE("wave: duration below 4 s is rejected") {
    CHECK_THROWS_AS(gen_wave(box_spec(0.5), 2.0, 1), std::invalid_argument);
}

TEST_CASE("throw: at least two releases, ballistic flight is exact") {
    const auto spec = box_spec(0.4);
    const auto ep = gen_throw(spec, 6.0, 11);
    const auto runs = flight_runs(ep);
    CHECK(runs.size() >= 2);

    for (const auto& run : runs) {
        const auto& s0 = ep.states[static_cast<std::size_t>(run.first)];
        const double vz0 = s0.v_obj.z;
        CHECK(vz0 > 1.5);

        // Parabola residual against closed-form kinematics from the release state.
        double apex_sampled = s0.q_obj.z;
        for (std::int64_t k = run.first; k <= run.last; ++k) {
            const double t = static_cast<double>(k - run.first) * ep.dt;
            const double z_expect = s0.q_obj.z + vz0 * t - 0.5 * kGravity * t * t;
            const double z = ep.states[static_cast<std::size_t>(k)].q_obj.z;
            CHECK(std::abs(z - z_expect) < 1e-9);
            apex_sampled = std::max(apex_sampled, z);
        }
        // Apex height above release: v^2 / 2g.
        const double apex = s0.q_obj.z + vz0 * vz0 / (2.0 * kGravity);
        CHECK(apex_sampled <= apex + 1e-12);
        if (static_cast<double>(run.last - run.first) * ep.dt > 2.0 * vz0 / kGravity * 0.5) {
            CHECK(apex - apex_sampled < 0.5 * kGravity * (0.5 * ep.dt) * (0.5 * ep.dt) + 1e-9);
        }

        // Specific energy is conserved along the arc.
        const double e0 = specific_energy(s0);
        for (std::int64_t k = run.first; k <= run.last; ++k) {
            CHECK(std::abs(specific_energy(ep.states[static_cast<std::size_t>(k)]) - e0) < 1e-6);
        }

        // Tactile silent during flight (skip the release boundary state, whose
        // frame still shows the last held interval).
        for (std::int64_t k = run.first + 1; k <= run.last; ++k) {
            CHECK(ep.frames[static_cast<std::size_t>(k)].mean() < 0.01);
        }
    }
    check_velocity_consistency(ep);
}

TEST_CASE("throw: closed-form apex numbers for a 3 m/s release") {
    CHECK(3.0 * 3.0 / (2.0 * kGravity) == doctest::Approx(0.4587).epsilon(1e-3));
    CHECK(3.0 / kGravity == doctest::Approx(0.3058).epsilon(1e-3));
}

TEST_CASE("pingpong: restitution law holds at every bounce") {
    const auto spec = box_spec(0.15);
    const auto ep = gen_pingpong(spec, 5.0, 23);
    const double z_plane = ep.states[0].q_hand.z;
    int checked = 0;
    for (std::int64_t k = 1; k < ep.size(); ++k) {
        if (ep.labels[static_cast<std::size_t>(k)] != static_cast<std::uint8_t>(Phase::Impact))
            continue;
        if (ep.labels[static_cast<std::size_t>(k - 1)] !=
            static_cast<std::uint8_t>(Phase::Flight))
            continue;
        const auto& pre = ep.states[static_cast<std::size_t>(k - 1)];
        const auto& post = ep.states[static_cast<std::size_t>(k)];
        // Contact time inside the frame: z(tau) = z_plane with z ballistic.
        const double a = -0.5 * kGravity;
        const double b = pre.v_obj.z;
        const double c = pre.q_obj.z - z_plane;
        const double disc = b * b - 4.0 * a * c;
        REQUIRE(disc >= 0.0);
        double tau = (-b + std::sqrt(disc)) / (2.0 * a);
        if (tau <= 0.0 || tau > ep.dt) tau = (-b - std::sqrt(disc)) / (2.0 * a);
        REQUIRE(tau > 0.0);
        REQUIRE(tau <= ep.dt + 1e-12);
        const double v_in = pre.v_obj.z - kGravity * tau;
        const double v_out = post.v_obj.z + kGravity * (ep.dt - tau);
        CHECK(v_out == doctest::Approx(-spec.restitution * v_in).epsilon(1e-9));
        ++checked;
    }
    CHECK(checked >= 3);
    check_velocity_consistency(ep);
}

TEST_CASE("pingpong: airborne frames sit at the noise floor, spikes match contacts") {
    const auto spec = box_spec(0.15);
    const auto ep = gen_pingpong(spec, 5.0, 31);
    const double threshold = 5.0 * noise_floor();
    int contacts = 0, spikes = 0;
    for (std::int64_t k = 0; k < ep.size(); ++k) {
        const bool contact = ep.contact_at(k);
        const bool spike = ep.frames[static_cast<std::size_t>(k)].mean() > threshold;
        CHECK(contact == spike);
        contacts += contact;
        spikes += spike;
        if (!contact) CHECK(ep.frames[static_cast<std::size_t>(k)].mean() < 0.01);
    }
    CHECK(contacts == spikes);
    CHECK(contacts >= 3);

    // Free flight between bounces conserves energy.
    for (const auto& run : flight_runs(ep)) {
        const double e0 = specific_energy(ep.states[static_cast<std::size_t>(run.first)]);
        for (std::int64_t k = run.first; k <= run.last; ++k) {
            CHECK(std::abs(specific_energy(ep.states[static_cast<std::size_t>(k)]) - e0) < 1e-6);
        }
    }
}

TEST_CASE("balance: tip stays above the hand with tilt under 25 degrees") {
    auto spec = box_spec(0.8);
    const auto res = gen_balance(spec, 5.0, 3);
    const auto& ep = res.episode;
    CHECK(res.retries == 0);
    const double len = 0.45 + 0.25 * spec.mass;
    const double sin25 = std::sin(25.0 * 3.14159265358979 / 180.0);
    double max_tilt_energy = 0.0;
    for (const auto& st : ep.states) {
        CHECK(st.q_obj.z - st.q_hand.z > 0.0);
        const Vec3 u = st.q_obj - st.q_hand;
        CHECK(u.norm_xy() < len * sin25);
        const Vec3 du = st.v_obj - st.v_hand;
        max_tilt_energy = std::max(
            max_tilt_energy,
            0.5 * du.norm_xy() * du.norm_xy() +
                0.5 * (kGravity / len) * u.norm_xy() * u.norm_xy());
    }
    CHECK(max_tilt_energy < 0.5);  // bounded well away from the |u| = L failure level
    for (const auto lbl : ep.labels) {
        CHECK(lbl == static_cast<std::uint8_t>(Phase::Contact));
    }
    check_velocity_consistency(ep);
}

TEST_CASE("balance: vertical start with no disturbance stays put") {
    auto spec = box_spec(0.8);
    BalanceTuning quiet;
    quiet.disturbance = 0.0;
    quiet.initial_tilt_frac = 0.0;
    const auto res = gen_balance(spec, 4.5, 9, quiet);
    const auto& ep = res.episode;
    const auto& first = ep.states[0];
    for (const auto& st : ep.states) {
        CHECK(st.q_obj.x == first.q_obj.x);
        CHECK(st.q_obj.z == first.q_obj.z);
        CHECK(st.v_obj.norm() == 0.0);
        CHECK(st.v_hand.norm() == 0.0);
    }
}

TEST_CASE("render: zero force is pure noise floor") {
    const auto spec = box_spec(0.5);
    Rng rng(77);
    double mean = 0.0;
    const int reps = 20;
    for (int i = 0; i < reps; ++i) {
        mean += render_tactile(0.0, 0.0, 0.0, spec, &rng).mean();
    }
    CHECK(mean / reps < 0.01);
    CHECK(mean / reps > 0.0);
    // Noise off: exactly zero.
    CHECK(render_tactile(0.0, 0.0, 0.0, spec, nullptr).sum() == 0.0);
}

TEST_CASE("render: doubled force doubles the active-cell mean (noise off)") {
    const auto spec = box_spec(0.5, 8);
    const auto f1 = render_tactile(2.0, 0.3, -0.4, spec, nullptr);
    const auto f2 = render_tactile(4.0, 0.3, -0.4, spec, nullptr);
    CHECK(f2.sum() == doctest::Approx(2.0 * f1.sum()).epsilon(1e-9));
    CHECK(f1.sum() == doctest::Approx(kSensitivity * 2.0).epsilon(1e-9));
}

TEST_CASE("render: footprint mask determines the support (noise off)") {
    const auto spec = box_spec(0.5, 5);
    const auto frame = render_tactile(3.0, 0.8, 0.1, spec, nullptr);
    for (int r = 0; r < kSensorDim; ++r) {
        for (int c = 0; c < kSensorDim; ++c) {
            const bool on_mask = spec.footprint.at3(0, r, c, kSensorDim, kSensorDim) > 0.0;
            if (!on_mask) CHECK(frame.at(r, c) == 0.0);
            if (on_mask) CHECK(frame.at(r, c) > 0.0);
        }
    }
}

TEST_CASE("render: torque direction reshapes the pattern") {
    const auto spec = box_spec(0.5, 8);
    const auto base = render_tactile(3.0, 0.0, 0.0, spec, nullptr);
    const auto shifted = render_tactile(3.0, 1.0, 0.0, spec, nullptr);
    const auto opposite = render_tactile(3.0, -1.0, 0.0, spec, nullptr);
    double d1 = 0.0, d2 = 0.0;
    for (std::size_t i = 0; i < base.v.size(); ++i) {
        d1 += std::abs(base.v[i] - shifted.v[i]);
        d2 += std::abs(shifted.v[i] - opposite.v[i]);
    }
    CHECK(d1 > 0.1);
    CHECK(d2 > 0.1);
    // Total pressure is unchanged by the directional weighting.
    CHECK(shifted.sum() == doctest::Approx(base.sum()).epsilon(1e-9));
}

TEST_CASE("object specs: pairwise distinct in mass or footprint") {
    const auto specs = sample_object_specs(15, Activity::Throw, 5);
    CHECK(specs.size() == 15);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        CHECK(specs[i].active_cells() >= 8);
        for (std::size_t j = i + 1; j < specs.size(); ++j) {
            const double ratio = std::max(specs[i].mass, specs[j].mass) /
                                 std::min(specs[i].mass, specs[j].mass);
            int diff = 0;
            for (std::size_t c = 0; c < specs[i].footprint.data.size(); ++c) {
                diff += (specs[i].footprint.data[c] > 0.0) != (specs[j].footprint.data[c] > 0.0);
            }
            CHECK((ratio >= 1.15 || diff >= 8));
        }
    }
}

TEST_CASE("make_dataset: split structure and reproducibility") {
    const auto dir1 = (fs::temp_directory_path() / "tdyn_store_a").string();
    const auto dir2 = (fs::temp_directory_path() / "tdyn_store_b").string();
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    const auto st1 = data::make_dataset(Activity::Wave, 3, 2, 5, 77, dir1, 4.0);
    const auto st2 = data::make_dataset(Activity::Wave, 3, 2, 5, 77, dir2, 4.0);

    CHECK(st1.entries.size() == 25);
    int train = 0, eseen = 0, eunseen = 0;
    for (const auto& e : st1.entries) {
        if (e.split == data::Split::Train) ++train;
        if (e.split == data::Split::EvalSeen) ++eseen;
        if (e.split == data::Split::EvalUnseen) ++eunseen;
    }
    CHECK(train == 12);    // 3 seen objects x 4 (80% of 5)
    CHECK(eseen == 3);
    CHECK(eunseen == 10);  // 2 unseen objects x 5
    // Unseen objects never appear in train.
    for (const auto& e : st1.entries) {
        if (e.object_id >= 3) CHECK(e.split == data::Split::EvalUnseen);
    }

    auto slurp = [](const std::string& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(dir1 + "/manifest.tsv") == slurp(dir2 + "/manifest.tsv"));
    CHECK(slurp(dir1 + "/" + st1.entries[0].path) == slurp(dir2 + "/" + st2.entries[0].path));

    const auto reloaded = data::load_store(dir1);
    CHECK(reloaded.entries.size() == st1.entries.size());
    CHECK(reloaded.specs.size() == 5);
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("tactile-contact correspondence across all activities") {
    const double threshold = 5.0 * noise_floor();
    for (const auto activity :
         {Activity::Wave, Activity::Throw, Activity::PingPong, Activity::Balance}) {
        const auto specs = sample_object_specs(2, activity, 19);
        const auto ep = generate(activity, specs[0], 5.0, 101);
        for (std::int64_t k = 0; k < ep.size(); ++k) {
            CHECK(ep.contact_at(k) ==
                  (ep.frames[static_cast<std::size_t>(k)].mean() > threshold));
        }
        check_velocity_consistency(ep);
    }
}
