#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <map>
#include <sstream>

#include "stem/analysis.hpp"
#include "stem/commands.hpp"
#include "stem/errors.hpp"
#include "stem/metrics.hpp"
#include "stem/synthetic.hpp"

namespace py = pybind11;
using namespace stem;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U32 = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const F64& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  return Matrix(a.shape(0), a.shape(1), std::vector<double>(a.data(), a.data() + a.size()));
}

F64 from_matrix(const Matrix& m) {
  F64 out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

std::span<const double> span_of(const F64& a) { return {a.data(), std::size_t(a.size())}; }
std::span<const std::uint8_t> span_of(const U8& a) { return {a.data(), std::size_t(a.size())}; }

MetricsReport report_of(const std::map<std::size_t, double>& aucs) {
  MetricsReport r;
  double sum = 0;
  for (auto [t, a] : aucs) {
    r.tasks.push_back({t, "task" + std::to_string(t), a, 0.0});
    sum += a;
  }
  if (!aucs.empty()) r.average_auc = sum / double(aucs.size());
  return r;
}

PairSet pairs_of(const U32& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw ShapeError("pairs must have shape (n, 2)");
  PairSet p;
  for (py::ssize_t i = 0; i < a.shape(0); ++i) p.pairs.emplace_back(a.at(i, 0), a.at(i, 1));
  return p;
}

U32 array_of(const PairSet& p) {
  U32 out({p.size(), std::size_t(2)});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < p.size(); ++i) {
    w(i, 0) = p.pairs[i].first;
    w(i, 1) = p.pairs[i].second;
  }
  return out;
}

py::dict synthetic(std::uint32_t num_users, std::uint32_t num_items, std::size_t num_samples,
                   double rho, std::vector<double> positive_ratios, std::uint32_t latent_dim,
                   double signal_scale, std::uint32_t num_extra_fields, std::uint32_t extra_vocab,
                   std::uint64_t seed) {
  SyntheticConfig c;
  c.num_users = num_users;
  c.num_items = num_items;
  c.num_samples = num_samples;
  c.rho = rho;
  c.latent_dim = latent_dim;
  c.signal_scale = signal_scale;
  c.num_extra_fields = num_extra_fields;
  c.extra_vocab = extra_vocab;
  c.seed = seed;
  if (!positive_ratios.empty()) {
    c.positive_ratios = positive_ratios;
    c.task_names.clear();
    c.task_bias.assign(positive_ratios.size(), 0.0);
    for (std::size_t t = 0; t < positive_ratios.size(); ++t) {
      c.task_names.push_back("task" + std::to_string(t));
    }
  }
  const SyntheticData g = generate_synthetic(c);
  const Dataset& d = g.dataset;
  U32 features({d.size(), d.num_fields()});
  U8 labels({d.size(), d.num_tasks()});
  auto fw = features.mutable_unchecked<2>();
  auto lw = labels.mutable_unchecked<2>();
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t f = 0; f < d.num_fields(); ++f) fw(i, f) = d.feature(i, f);
    for (std::size_t t = 0; t < d.num_tasks(); ++t) lw(i, t) = d.label(i, t);
  }
  py::dict out;
  out["features"] = features;
  out["labels"] = labels;
  out["probabilities"] = from_matrix(g.probabilities);
  out["bias"] = g.bias;
  out["vocab_sizes"] = d.schema().vocab_sizes;
  return out;
}

}  // namespace

PYBIND11_MODULE(_stemrec, m) {
  m.doc() = "Multi-task recommender with shared and task-specific embeddings";

  auto base = py::register_exception<Error>(m, "StemError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<EmptyInputError>(m, "EmptyInputError", base.ptr());
  py::register_exception<BoundsError>(m, "BoundsError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.def("auc", [](const F64& s, const U8& y) { return auc(span_of(s), span_of(y)); },
        py::arg("scores"), py::arg("labels"),
        "Mann-Whitney AUC with ties; None when labels hold one class.");
  m.def("logloss", [](const F64& s, const U8& y) { return logloss(span_of(s), span_of(y)); },
        py::arg("scores"), py::arg("labels"));
  m.def(
      "mtl_gain",
      [](const std::map<std::size_t, double>& model,
         const std::vector<std::map<std::size_t, double>>& singles) {
        std::vector<MetricsReport> reports;
        for (const auto& s : singles) reports.push_back(report_of(s));
        return mtl_gain(report_of(model), reports);
      },
      py::arg("model_aucs"), py::arg("single_task_aucs"),
      "Average AUC of the model minus the average of single-task AUCs ({task: auc} dicts).");

  m.def("equal_freq_buckets",
        [](const F64& s, std::size_t n) { return equal_freq_buckets(span_of(s), n); },
        py::arg("scores"), py::arg("n_buckets") = 10);
  m.def("classify_delta",
        [](int delta, int lo, int hi) { return to_string(classify_delta(delta, lo, hi)); },
        py::arg("delta"), py::arg("lo") = -4, py::arg("hi") = 6);
  m.def(
      "subset_split",
      [](const F64& a, const F64& b, int lo, int hi, std::size_t n) {
        const BucketSplit s = subset_split(span_of(a), span_of(b), lo, hi, n);
        std::vector<std::string> names;
        for (Subset x : s.subset) names.push_back(to_string(x));
        py::dict out;
        out["bucket_a"] = s.bucket_a;
        out["bucket_b"] = s.bucket_b;
        out["delta"] = s.delta;
        out["subset"] = names;
        return out;
      },
      py::arg("scores_a"), py::arg("scores_b"), py::arg("lo") = -4, py::arg("hi") = 6,
      py::arg("n_buckets") = 10);

  m.def("generate_synthetic", &synthetic, py::arg("num_users") = 1000,
        py::arg("num_items") = 1000, py::arg("num_samples") = 10000, py::arg("rho") = 0.0,
        py::arg("positive_ratios") = std::vector<double>{}, py::arg("latent_dim") = 8,
        py::arg("signal_scale") = 2.0, py::arg("num_extra_fields") = 2,
        py::arg("extra_vocab") = 50, py::arg("seed") = 1);

  m.def("pair_distance",
        [](const F64& table, std::uint32_t u, std::uint32_t i) {
          return pair_distance(to_matrix(table), u, i);
        },
        py::arg("table"), py::arg("user_row"), py::arg("item_row"));
  m.def(
      "select_contradictory",
      [](const U32& pairs, const F64& a, const F64& b, double top, double bottom) {
        const auto sel = select_contradictory(pairs_of(pairs), to_matrix(a), to_matrix(b), top,
                                              bottom);
        return py::make_tuple(array_of(sel.selected), sel.fraction);
      },
      py::arg("pairs"), py::arg("table_a"), py::arg("table_b"), py::arg("top_frac") = 0.4,
      py::arg("bottom_frac") = 0.4, "Returns (selected pairs, |S| / |candidates|).");

  m.def(
      "predict",
      [](const std::filesystem::path& model_dir, const std::filesystem::path& csv) {
        const LoadedModel lm = load_model_dir(model_dir);
        const Dataset d = load_csv(csv, lm.model.schema());
        return from_matrix(lm.model.predict(lm.params, d));
      },
      py::arg("model_dir"), py::arg("csv"),
      "Scores of a trained model directory on a CSV; inactive task columns are NaN.");
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int rc;
        {
          py::gil_scoped_release release;
          rc = run_cli(args, out, err);
        }
        return py::make_tuple(rc, out.str(), err.str());
      },
      py::arg("args"), "Runs a stemrec subcommand; returns (exit_code, stdout, stderr).");
}
