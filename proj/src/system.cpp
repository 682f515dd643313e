#include "polydec/system.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <mutex>

#include <nlohmann/json.hpp>

namespace polydec {

using nlohmann::json;

Vector eval_dynamics(const ControlSystem& sys, const Vector& x, const Vector& u) {
    Vector xdot(sys.n);
    sys.dynamics(x, u, xdot);
    return xdot;
}

double eval_cost(const ControlSystem& sys, const Vector& x, const Vector& u) {
    const Vector dx = sys.state_error(x);
    const Vector du = u - sys.goal_input;
    return dx.dot(sys.Q * dx) + du.dot(sys.R * du);
}

void linearize(const ControlSystem& sys, const Vector& x0, const Vector& u0,
               Matrix& A, Matrix& B) {
    A.resize(sys.n, sys.n);
    B.resize(sys.n, sys.m);
    Vector xp = x0, xm = x0, up = u0, um = u0;
    Vector fp(sys.n), fm(sys.n);
    for (int i = 0; i < sys.n; ++i) {
        const double h = std::max(1e-6, 1e-6 * std::abs(x0[i]));
        xp[i] = x0[i] + h;
        xm[i] = x0[i] - h;
        sys.dynamics(xp, u0, fp);
        sys.dynamics(xm, u0, fm);
        A.col(i) = (fp - fm) / (2.0 * h);
        xp[i] = x0[i];
        xm[i] = x0[i];
    }
    for (int j = 0; j < sys.m; ++j) {
        const double h = std::max(1e-6, 1e-6 * std::abs(u0[j]));
        up[j] = u0[j] + h;
        um[j] = u0[j] - h;
        sys.dynamics(x0, up, fp);
        sys.dynamics(x0, um, fm);
        B.col(j) = (fp - fm) / (2.0 * h);
        up[j] = u0[j];
        um[j] = u0[j];
    }
    if (!A.allFinite() || !B.allFinite())
        throw NumericalError("linearize: non-finite dynamics near (" + sys.name + ") expansion point");
}

Vector clamp_input(const ControlSystem& sys, const Vector& u) {
    return u.cwiseMax(sys.input_lower).cwiseMin(sys.input_upper);
}

namespace {

bool is_partition(const std::vector<IndexGroup>& groups, int count) {
    std::vector<int> seen(count, 0);
    for (const auto& g : groups)
        for (int i : g.indices) {
            if (i < 0 || i >= count) return false;
            seen[i]++;
        }
    for (int c : seen)
        if (c != 1) return false;
    return true;
}

bool symmetric_psd(const Matrix& M, double eig_floor) {
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + M.cwiseAbs().maxCoeff()))
        return false;
    Eigen::SelfAdjointEigenSolver<Matrix> es(M);
    return es.eigenvalues().minCoeff() >= eig_floor;
}

}  // namespace

void validate_system(const ControlSystem& sys) {
    if (sys.n <= 0 || sys.m <= 0) throw ConfigError("system dimensions must be positive");
    if (!sys.dynamics) throw ConfigError("system has no dynamics");
    auto dim = [&](const Vector& v, int want, const char* what) {
        if (v.size() != want) throw ConfigError(std::string("bad size for ") + what);
    };
    dim(sys.input_lower, sys.m, "input_lower");
    dim(sys.input_upper, sys.m, "input_upper");
    dim(sys.goal_state, sys.n, "goal_state");
    dim(sys.goal_input, sys.m, "goal_input");
    dim(sys.full_box.lo, sys.n, "full_box");
    dim(sys.eval_box.lo, sys.n, "eval_box");
    for (int j = 0; j < sys.m; ++j)
        if (sys.goal_input[j] < sys.input_lower[j] || sys.goal_input[j] > sys.input_upper[j])
            throw ConfigError("goal_input outside input bounds");
    if (!sys.full_box.contains(sys.goal_state))
        throw ConfigError("goal_state outside full_box");
    if (!sys.full_box.contains_box(sys.eval_box))
        throw ConfigError("eval_box not contained in full_box");
    if (!symmetric_psd(sys.Q, -1e-9)) throw ConfigError("Q must be symmetric PSD");
    if (!symmetric_psd(sys.R, 1e-15)) throw ConfigError("R must be symmetric PD");
    if (sys.lambda <= 0.0) throw ConfigError("lambda must be positive");
    if (static_cast<int>(sys.grid_shape.size()) != sys.n)
        throw ConfigError("grid_shape must have one entry per state axis");
    for (int s : sys.grid_shape)
        if (s < 2) throw ConfigError("grid_shape entries must be >= 2");
    if (static_cast<int>(sys.periodic_axes.size()) != sys.n)
        throw ConfigError("periodic_axes must have one entry per state axis");
    if (!is_partition(sys.state_groups, sys.n)) throw ConfigError("state_groups must partition the state indices");
    if (!is_partition(sys.input_groups, sys.m)) throw ConfigError("input_groups must partition the input indices");
}

void scale_grid(ControlSystem& sys, double f) {
    if (f <= 0.0) throw ConfigError("grid scale must be positive");
    for (auto& s : sys.grid_shape)
        s = std::max(2, static_cast<int>(std::lround(s * f)));
}

// ---------------------------------------------------------------------------
// dynamics registry

namespace {

std::map<std::string, DynamicsFactory>& registry() {
    static std::map<std::string, DynamicsFactory> reg;
    return reg;
}
std::mutex registry_mutex;

DynamicsFn make_cartpole_dynamics(double mc, double mp, double l, double g) {
    return [=](const Vector& x, const Vector& u, Vector& out) {
        const double th = x[2], w = x[3];
        const double F = u[0], tau = u[1];
        const double s = std::sin(th), c = std::cos(th), s2 = std::sin(2.0 * th);
        const double den = mc + mp * s;
        out.resize(4);
        out[0] = x[1];
        out[1] = (F - (tau / l) * c + mp * l * w * w * s + 0.5 * mp * g * s2) / den;
        out[2] = w;
        out[3] = ((tau / (l * l)) * (mc / mp + 1.0) - (F / l) * c - 0.5 * mp * w * w * s2 -
                  (g / l) * (mc + mp) * s) /
                 den;
    };
}

DynamicsFn make_biped_dynamics(double m, double I, double d, double df, double l0, double g) {
    return [=](const Vector& x, const Vector& u, Vector& out) {
        const double lr = x[0], ar = x[1], vx = x[2], vz = x[3], th = x[4], w = x[5];
        const double ll = std::sqrt(lr * lr + df * df + 2.0 * lr * df * std::cos(ar));
        if (!(ll > 1e-9) || !(lr > 1e-9))
            throw DomainError("biped kinematic singularity: degenerate leg length");
        const double al = std::asin(lr * std::sin(ar) / ll);
        // a leg longer than l0 has broken contact and transmits nothing
        const double Fr = (lr > l0) ? 0.0 : u[1];
        const double tr = (lr > l0) ? 0.0 : u[3];
        const double Fl = (ll > l0) ? 0.0 : u[0];
        const double tl = (ll > l0) ? 0.0 : u[2];
        const double sr = std::sin(ar), cr = std::cos(ar);
        const double sl = std::sin(al), cl = std::cos(al);
        const double xdd = (Fr * cr + (tr / lr) * sr + Fl * cl + (tl / ll) * sl) / m;
        const double zdd = (Fr * sr - (tr / lr) * cr + Fl * sl - (tl / ll) * cl) / m - g;
        const double thdd = (tr * (1.0 + (d / lr) * std::sin(ar - th)) + Fr * d * std::cos(ar - th) +
                             tl * (1.0 + (d / ll) * std::sin(al - th)) + Fl * d * std::cos(al - th)) /
                            I;
        // hip velocity follows COM velocity plus the torso rotation term
        const double hx = vx + d * w * std::cos(th);
        const double hz = vz + d * w * std::sin(th);
        out.resize(6);
        out[0] = hx * cr + hz * sr;
        out[1] = (-hx * sr + hz * cr) / lr;
        out[2] = xdd;
        out[3] = zdd;
        out[4] = w;
        out[5] = thdd;
    };
}

// Serial chain of uniform thin rods in the vertical plane, torque at every
// joint. Joint angles are relative; the first is measured from hanging-down.
DynamicsFn make_manipulator_dynamics(std::vector<double> mass, std::vector<double> len, double g) {
    const int n = static_cast<int>(mass.size());
    return [=](const Vector& x, const Vector& u, Vector& out) {
        Vector phi(n), phid(n);
        double acc_a = 0.0, acc_v = 0.0;
        for (int i = 0; i < n; ++i) {
            acc_a += x[i];
            acc_v += x[n + i];
            phi[i] = acc_a;
            phid[i] = acc_v;
        }
        auto arm = [&](int a, int k) {  // lever of joint-angle a on the COM of link k
            if (a < k) return len[a];
            if (a == k) return 0.5 * len[a];
            return 0.0;
        };
        Matrix M = Matrix::Zero(n, n);
        Vector G = Vector::Zero(n), h = Vector::Zero(n);
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) {
                double c_ab = 0.0;
                for (int k = 0; k < n; ++k) c_ab += mass[k] * arm(a, k) * arm(b, k);
                M(a, b) += c_ab * std::cos(phi[a] - phi[b]);
                if (a != b) h[a] += c_ab * std::sin(phi[a] - phi[b]) * phid[b] * phid[b];
            }
            M(a, a) += mass[a] * len[a] * len[a] / 12.0;  // rod inertia about its COM
            double w_a = 0.0;
            for (int k = 0; k < n; ++k) w_a += mass[k] * arm(a, k);
            G[a] = g * w_a * std::sin(phi[a]);
        }
        // generalized force of relative-joint torques in absolute coordinates
        Vector q = Vector::Zero(n);
        for (int a = 0; a < n; ++a) {
            q[a] = u[a];
            if (a + 1 < n) q[a] -= u[a + 1];
        }
        const Vector phidd = M.ldlt().solve(q - h - G);
        out.resize(2 * n);
        for (int i = 0; i < n; ++i) {
            out[i] = x[n + i];
            out[n + i] = phidd[i] - (i > 0 ? phidd[i - 1] : 0.0);
        }
    };
}

DynamicsFn make_linear_dynamics(const Matrix& A, const Matrix& B) {
    return [A, B](const Vector& x, const Vector& u, Vector& out) { out = A * x + B * u; };
}

Matrix matrix_from_json(const json& j, int rows, int cols) {
    if (!j.is_array() || static_cast<int>(j.size()) != rows * cols)
        throw ConfigError("matrix field must be a row-major array of length rows*cols");
    Matrix M(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) M(r, c) = j[r * cols + c].get<double>();
    return M;
}

void register_builtins() {
    static std::once_flag once;
    std::call_once(once, [] {
        register_dynamics("cartpole", [](const json& p, int, int) {
            return make_cartpole_dynamics(p.value("mc", 5.0), p.value("mp", 1.0),
                                          p.value("l", 0.9), p.value("g", 9.81));
        });
        register_dynamics("biped3", [](const json& p, int, int) {
            return make_biped_dynamics(p.value("m", 72.0), p.value("I", 3.0), p.value("d", 0.2),
                                       p.value("df", 0.5), p.value("l0", 1.15), p.value("g", 9.81));
        });
        register_dynamics("planar_manipulator", [](const json& p, int, int) {
            auto mass = p.at("masses").get<std::vector<double>>();
            auto len = p.at("lengths").get<std::vector<double>>();
            if (mass.size() != len.size() || mass.empty())
                throw ConfigError("planar_manipulator needs matching masses/lengths");
            return make_manipulator_dynamics(mass, len, p.value("g", 9.81));
        });
        register_dynamics("linear", [](const json& p, int n, int m) {
            return make_linear_dynamics(matrix_from_json(p.at("A"), n, n),
                                        matrix_from_json(p.at("B"), n, m));
        });
    });
}

}  // namespace

void register_dynamics(const std::string& name, DynamicsFactory factory) {
    std::lock_guard<std::mutex> lock(registry_mutex);
    registry()[name] = std::move(factory);
}

DynamicsFn make_dynamics(const std::string& name, const json& params, int n, int m) {
    register_builtins();
    std::lock_guard<std::mutex> lock(registry_mutex);
    auto it = registry().find(name);
    if (it == registry().end())
        throw ConfigError("unknown dynamics name: " + name);
    return it->second(params, n, m);
}

namespace {

Vector vector_from_json(const json& j) {
    Vector v(j.size());
    for (size_t i = 0; i < j.size(); ++i) v[static_cast<int>(i)] = j[i].get<double>();
    return v;
}

Box box_from_json(const json& j) {
    Box b;
    b.lo.resize(j.size());
    b.hi.resize(j.size());
    for (size_t i = 0; i < j.size(); ++i) {
        b.lo[static_cast<int>(i)] = j[i][0].get<double>();
        b.hi[static_cast<int>(i)] = j[i][1].get<double>();
    }
    return b;
}

std::vector<IndexGroup> groups_from_json(const json& j) {
    std::vector<IndexGroup> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        IndexGroup g;
        if (j.is_object()) {
            g.name = it.key();
            g.indices = it.value().get<std::vector<int>>();
        } else {
            g.name = it->value("name", "g" + std::to_string(out.size()));
            g.indices = it->at("indices").get<std::vector<int>>();
        }
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace

ControlSystem load_system_json(const json& doc) {
    ControlSystem sys;
    sys.name = doc.value("name", "custom");
    sys.n = doc.at("n").get<int>();
    sys.m = doc.at("m").get<int>();
    sys.dynamics = make_dynamics(doc.at("dynamics").get<std::string>(),
                                 doc.value("dynamics_params", json::object()), sys.n, sys.m);
    sys.input_lower = vector_from_json(doc.at("input_lower"));
    sys.input_upper = vector_from_json(doc.at("input_upper"));
    sys.goal_state = vector_from_json(doc.at("goal_state"));
    sys.goal_input = vector_from_json(doc.at("goal_input"));
    sys.Q = matrix_from_json(doc.at("Q"), sys.n, sys.n);
    sys.R = matrix_from_json(doc.at("R"), sys.m, sys.m);
    sys.lambda = doc.at("lambda").get<double>();
    sys.full_box = box_from_json(doc.at("full_box"));
    sys.eval_box = box_from_json(doc.at("eval_box"));
    sys.grid_shape = doc.at("grid_shape").get<std::vector<int>>();
    sys.periodic_axes.assign(sys.n, false);
    if (doc.contains("periodic_axes"))
        for (int i : doc["periodic_axes"].get<std::vector<int>>()) sys.periodic_axes.at(i) = true;
    if (doc.contains("state_groups")) sys.state_groups = groups_from_json(doc["state_groups"]);
    if (doc.contains("input_groups")) sys.input_groups = groups_from_json(doc["input_groups"]);
    if (sys.state_groups.empty())
        for (int i = 0; i < sys.n; ++i) sys.state_groups.push_back({"x" + std::to_string(i), {i}});
    if (sys.input_groups.empty())
        for (int j = 0; j < sys.m; ++j) sys.input_groups.push_back({"u" + std::to_string(j), {j}});
    sys.default_horizon = doc.value("horizon", 4.0);
    validate_system(sys);
    return sys;
}

ControlSystem load_system_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open system file: " + path);
    json doc = json::parse(in);
    return load_system_json(doc);
}

}  // namespace polydec
