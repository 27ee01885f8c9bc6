#include <sstream>
#include <string>

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "iwvi/config.hpp"
#include "iwvi/elliptical.hpp"
#include "iwvi/estimators.hpp"
#include "iwvi/experiments.hpp"
#include "iwvi/models.hpp"

namespace py = pybind11;
using namespace iwvi;

namespace {

EllipticalParams make_params(const Eigen::VectorXd& mu, const Eigen::MatrixXd& scale, const std::string& family,
                             double nu) {
  const int d = static_cast<int>(mu.size());
  const RadialSpec radial =
      parse_family(family) == Family::Gaussian ? RadialSpec::gaussian(d) : RadialSpec::student_t(nu, d);
  return EllipticalParams(mu, scale, radial);
}

py::dict gap_to_dict(const GapDiagnostics& g) {
  py::dict out;
  out["iw_elbo"] = g.iw.value;
  out["iw_elbo_se"] = g.iw.std_error;
  out["kl_joint"] = g.kl_joint;
  out["kl_joint_se"] = g.kl_joint_se;
  out["kl_joint_cv"] = g.kl_joint_cv;
  out["kl_joint_cv_se"] = g.kl_joint_cv_se;
  out["var_R"] = g.var_R;
  out["asym_const"] = g.asym_const;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Importance weighted variational inference with elliptical families";
  m.attr("__version__") = library_version();

  py::class_<EllipticalParams>(m, "EllipticalParams")
      .def(py::init(&make_params), py::arg("mu"), py::arg("scale"), py::arg("family") = "gaussian",
           py::arg("nu") = kNuInit, "q with location mu, upper-triangular scale factor A (Sigma = A^T A).")
      .def_static(
          "unflatten",
          [](const Eigen::VectorXd& raw, const std::string& family, int dim) {
            return EllipticalParams::unflatten(raw, parse_family(family), dim);
          },
          py::arg("raw"), py::arg("family"), py::arg("dim"))
      .def("flatten", &EllipticalParams::flatten)
      .def_property_readonly("dim", &EllipticalParams::dim)
      .def_property_readonly("family", [](const EllipticalParams& q) { return std::string(family_name(q.family())); })
      .def_property_readonly("nu", &EllipticalParams::nu)
      .def_property_readonly("mu", &EllipticalParams::mu)
      .def_property_readonly("scale", &EllipticalParams::scale_factor)
      .def("sigma", &EllipticalParams::sigma)
      .def("log_density", [](const EllipticalParams& q, const Eigen::VectorXd& z) { return log_density(z, q); })
      .def(
          "sample",
          [](const EllipticalParams& q, int n, std::uint64_t seed) {
            RngStream rng(seed, 0);
            Eigen::MatrixXd out(n, q.dim());
            for (int i = 0; i < n; ++i) out.row(i) = sample(q, rng).transpose();
            return out;
          },
          py::arg("n"), py::arg("seed") = 0);

  py::class_<TargetModel, std::shared_ptr<TargetModel>>(m, "TargetModel")
      .def_property_readonly("dim", &TargetModel::dim)
      .def("log_joint", &TargetModel::log_joint)
      .def("grad_log_joint", &TargetModel::grad_log_joint)
      .def_property_readonly("log_evidence",
                             [](const TargetModel& t) -> py::object {
                               if (!t.oracle()) return py::none();
                               return py::float_(t.oracle()->log_evidence);
                             })
      .def_property_readonly("posterior_mean", [](const TargetModel& t) -> py::object {
        if (!t.oracle() || !t.oracle()->posterior_mean) return py::none();
        return py::cast(*t.oracle()->posterior_mean);
      });

  py::class_<GaussianTarget, TargetModel, std::shared_ptr<GaussianTarget>>(m, "GaussianTarget")
      .def(py::init<Eigen::VectorXd, Eigen::VectorXd, double>(), py::arg("mean"), py::arg("sd"),
           py::arg("log_scale") = 0.0);
  py::class_<MixtureTarget1D, TargetModel, std::shared_ptr<MixtureTarget1D>>(m, "MixtureTarget1D")
      .def(py::init<std::vector<double>, std::vector<double>, std::vector<double>>(), py::arg("weights"),
           py::arg("means"), py::arg("sds"));
  py::class_<DirichletTarget, TargetModel, std::shared_ptr<DirichletTarget>>(m, "DirichletTarget")
      .def(py::init<Eigen::VectorXd>(), py::arg("alpha"))
      .def_property_readonly("alpha", &DirichletTarget::alpha);
  py::class_<ClutterTarget, TargetModel, std::shared_ptr<ClutterTarget>>(m, "ClutterTarget")
      .def(py::init([](const Eigen::MatrixXd& obs) {
             std::vector<Eigen::VectorXd> rows;
             for (Eigen::Index i = 0; i < obs.rows(); ++i) rows.emplace_back(obs.row(i).transpose());
             return std::make_shared<ClutterTarget>(std::move(rows), static_cast<int>(obs.cols()));
           }),
           py::arg("observations"), "Observations as an (n, d) array.");

  m.def(
      "iw_elbo",
      [](const EllipticalParams& q, const TargetModel& t, int M, int n_batches, std::uint64_t seed) {
        const IwEstimate e = iw_elbo(q, t, M, n_batches, seed);
        return py::make_tuple(e.value, e.std_error);
      },
      py::arg("q"), py::arg("target"), py::arg("M"), py::arg("n_batches") = kDefaultBatches, py::arg("seed") = 0,
      "Returns (estimate, standard error).");
  m.def(
      "elbo",
      [](const EllipticalParams& q, const TargetModel& t, int n_batches, std::uint64_t seed) {
        const IwEstimate e = elbo(q, t, n_batches, seed);
        return py::make_tuple(e.value, e.std_error);
      },
      py::arg("q"), py::arg("target"), py::arg("n_batches") = kDefaultBatches, py::arg("seed") = 0);
  m.def(
      "snis_expect",
      [](const TestFunction& f, const EllipticalParams& q, const TargetModel& t, int M, int n_batches,
         std::uint64_t seed) {
        const SnisEstimate e = snis_expect(f, q, t, M, n_batches, seed);
        return py::make_tuple(e.estimate, e.std_error);
      },
      py::arg("f"), py::arg("q"), py::arg("target"), py::arg("M"), py::arg("n_batches") = kDefaultBatches,
      py::arg("seed") = 0);
  m.def(
      "sample_qM",
      [](const EllipticalParams& q, const TargetModel& t, int M, int n, std::uint64_t seed) {
        RngStream rng(seed, 0);
        Eigen::MatrixXd out(n, q.dim());
        for (int i = 0; i < n; ++i) out.row(i) = sample_qM(q, t, M, rng)[0].transpose();
        return out;
      },
      py::arg("q"), py::arg("target"), py::arg("M"), py::arg("n"), py::arg("seed") = 0,
      "n draws of z_1 from q_M, one per row.");
  m.def(
      "qm_marginal_density",
      [](const std::vector<double>& grid, const EllipticalParams& q, const TargetModel& t, int M, int n_inner,
         std::uint64_t seed) {
        std::vector<double> out;
        for (const DensityEstimate& e : qm_marginal_density_grid(grid, q, t, M, n_inner, seed)) out.push_back(e.density);
        return out;
      },
      py::arg("grid"), py::arg("q"), py::arg("target"), py::arg("M"), py::arg("n_inner") = 4'000, py::arg("seed") = 0);
  m.def(
      "gap_diagnostics",
      [](const EllipticalParams& q, const TargetModel& t, int M, int n_batches, std::uint64_t seed) {
        return gap_to_dict(gap_diagnostics(q, t, M, n_batches, seed));
      },
      py::arg("q"), py::arg("target"), py::arg("M"), py::arg("n_batches") = kDefaultBatches, py::arg("seed") = 0);
  m.def(
      "fixed_noise_iw_elbo",
      [](const EllipticalParams& q, const TargetModel& t, int M, int n_tuples, std::uint64_t seed) {
        // The noise must not move with q, so draw it at a fixed nu.
        const RadialSpec radial{q.family(), kNuInit, q.dim()};
        const NoiseSet noise = make_noise_set(radial, M, n_tuples, seed);
        Eigen::VectorXd grad;
        const double value = fixed_noise_iw_elbo(q, t, noise, &grad);
        return py::make_tuple(value, grad);
      },
      py::arg("q"), py::arg("target"), py::arg("M"), py::arg("n_tuples"), py::arg("seed") = 0,
      "Objective and raw-parameter gradient on the noise set fixed by (family, dim, M, n_tuples, seed).");

  m.def(
      "run_experiment",
      [](const std::string& config_json) {
        const ExperimentConfig config = parse_config(nlohmann::json::parse(config_json));
        std::vector<ResultRow> rows;
        {
          py::gil_scoped_release release;
          rows = run_experiment(config);
        }
        std::ostringstream csv;
        write_csv(csv, rows);
        return csv.str();
      },
      py::arg("config_json"), "Runs an experiment from a JSON config and returns the CSV text.");
  m.def(
      "run_to_directory",
      [](const std::string& config_json, const std::string& out_dir) {
        const ExperimentConfig config = parse_config(nlohmann::json::parse(config_json));
        py::gil_scoped_release release;
        return run_to_directory(config, out_dir).csv_path.string();
      },
      py::arg("config_json"), py::arg("out_dir"), "Writes config.json, results.csv and manifest.json; returns the CSV path.");

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DatasetMissing>(m, "DatasetMissing", PyExc_FileNotFoundError);
}
