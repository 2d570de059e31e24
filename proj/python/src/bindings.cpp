// Python bindings: numpy in, numpy out. Matrices cross the boundary as
// C-contiguous float32 arrays and are copied.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "spectral/diagnostics.hpp"
#include "spectral/experiment.hpp"
#include "spectral/fused.hpp"
#include "spectral/model.hpp"
#include "spectral/transforms.hpp"

namespace py = pybind11;
using namespace spectral;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const FloatArray& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  return Matrix(a.shape(0), a.shape(1), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_numpy(const Matrix& m) {
  py::array_t<float> out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

std::vector<float> to_vector(const FloatArray& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-D coefficient array");
  return {a.data(), a.data() + a.size()};
}

py::dict traffic_dict(const TrafficCounter& t) {
  py::dict d;
  d["bytes_read"] = t.bytes_read;
  d["bytes_written"] = t.bytes_written;
  d["scratch_peak"] = t.scratch_peak;
  d["basis_bytes"] = t.basis_bytes;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sparse spectral weight parameterization: transforms, layers and diagnostics";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  // --- transforms ---
  m.def("dct_matrix", [](std::int64_t k) { return to_numpy(dct_matrix(k)); }, py::arg("k"),
        "Orthonormal DCT-II matrix (k x k).");
  m.def("random_orthogonal", [](std::int64_t k, std::uint64_t seed) { return to_numpy(random_orthogonal(k, seed)); },
        py::arg("k"), py::arg("seed"));

  py::class_<SeparableBasis>(m, "SeparableBasis")
      .def_static("dct", &SeparableBasis::dct, py::arg("rows"), py::arg("cols"))
      .def_static("random", &SeparableBasis::random, py::arg("rows"), py::arg("cols"), py::arg("row_seed"),
                  py::arg("col_seed"))
      .def_property_readonly("kind", [](const SeparableBasis& b) { return std::string(to_string(b.kind())); })
      .def_property_readonly("rows", &SeparableBasis::rows)
      .def_property_readonly("cols", &SeparableBasis::cols)
      .def_property_readonly("q_row", [](const SeparableBasis& b) { return to_numpy(b.q_row()); })
      .def_property_readonly("q_col", [](const SeparableBasis& b) { return to_numpy(b.q_col()); });

  py::class_<SelectionSet>(m, "SelectionSet")
      .def_static("zigzag", &SelectionSet::zigzag, py::arg("rows"), py::arg("cols"), py::arg("k"))
      .def_static("random", &SelectionSet::random, py::arg("rows"), py::arg("cols"), py::arg("k"), py::arg("seed"))
      .def_static(
          "from_indices",
          [](std::int64_t rows, std::int64_t cols, const std::vector<std::pair<std::int32_t, std::int32_t>>& idx) {
            std::vector<GridIndex> g;
            for (auto [r, c] : idx) g.push_back({r, c});
            return SelectionSet::explicit_indices(rows, cols, std::move(g));
          },
          py::arg("rows"), py::arg("cols"), py::arg("indices"))
      .def_property_readonly("rows", &SelectionSet::rows)
      .def_property_readonly("cols", &SelectionSet::cols)
      .def("__len__", &SelectionSet::size)
      .def_property_readonly("indices",
                             [](const SelectionSet& s) {
                               std::vector<std::pair<std::int32_t, std::int32_t>> out;
                               for (const auto& g : s.indices()) out.emplace_back(g.row, g.col);
                               return out;
                             })
      .def_property_readonly("flat", [](const SelectionSet& s) { return s.flat(); });

  m.def("dct2_forward", [](const FloatArray& x, const SeparableBasis& b) { return to_numpy(dct2_forward(to_matrix(x), b)); },
        py::arg("x"), py::arg("basis"), "Q_row X Q_col^T");
  m.def("idct2", [](const FloatArray& c, const SeparableBasis& b) { return to_numpy(idct2(to_matrix(c), b)); },
        py::arg("coeffs"), py::arg("basis"), "Q_row^T C Q_col");
  m.def(
      "idct2_sparse",
      [](const FloatArray& c, const SelectionSet& s, const SeparableBasis& b) {
        return to_numpy(idct2_sparse(to_vector(c), s, b));
      },
      py::arg("c"), py::arg("selection"), py::arg("basis"), "Materialize W from K coefficients on the selection.");

  // --- fused reconstruction ---
  m.def(
      "fused_apply",
      [](const FloatArray& c, const SelectionSet& s, const SeparableBasis& b, const FloatArray& x, bool fast) {
        auto r = fused_apply(to_vector(c), s, b, to_matrix(x), {.fast_transform = fast});
        return py::make_tuple(to_numpy(r.y), traffic_dict(r.traffic));
      },
      py::arg("c"), py::arg("selection"), py::arg("basis"), py::arg("x"), py::arg("fast_transform") = true,
      "Y = X W^T without materializing W; returns (Y, traffic).");
  m.def(
      "naive_apply",
      [](const FloatArray& c, const SelectionSet& s, const SeparableBasis& b, const FloatArray& x) {
        auto r = naive_apply(to_vector(c), s, b, to_matrix(x));
        return py::make_tuple(to_numpy(r.y), traffic_dict(r.traffic));
      },
      py::arg("c"), py::arg("selection"), py::arg("basis"), py::arg("x"));
  m.def(
      "fused_apply_blocked",
      [](const FloatArray& c, const SelectionSet& s, const SeparableBasis& b, const FloatArray& x,
         std::uint64_t budget) {
        auto r = fused_apply_blocked(to_vector(c), s, b, to_matrix(x), budget);
        return py::make_tuple(to_numpy(r.y), traffic_dict(r.traffic));
      },
      py::arg("c"), py::arg("selection"), py::arg("basis"), py::arg("x"), py::arg("tile_budget_bytes"));

  // --- diagnostics ---
  m.def("stable_rank", [](const FloatArray& w) { return stable_rank(to_matrix(w)); }, py::arg("w"));
  m.def("numerical_rank", [](const FloatArray& w, double tol) { return numerical_rank(to_matrix(w), tol); },
        py::arg("w"), py::arg("rel_tol") = 1e-5);
  m.def("generic_subspace_rank_probe",
        [](std::int64_t rows, std::int64_t cols, std::int64_t k, int trials, std::uint64_t seed) {
          return generic_subspace_rank_probe(rows, cols, k, trials, seed);
        },
        py::arg("rows"), py::arg("cols"), py::arg("k"), py::arg("trials"), py::arg("seed"));
  m.def("lora_rank_probe", &lora_rank_probe, py::arg("rows"), py::arg("cols"), py::arg("rank"), py::arg("trials"),
        py::arg("seed"));

  // --- model ---
  m.def(
      "param_counts",
      [](const std::string& variant, double ratio, std::int64_t lora_rank, std::int64_t vocab_size) {
        ModelConfig c;
        c.variant = parse_variant(variant);
        c.ratio = ratio;
        c.lora_rank = lora_rank;
        c.vocab_size = vocab_size;
        const auto p = TransformerModel(c, 0).param_counts();
        return py::make_tuple(p.block, p.non_block);
      },
      py::arg("variant"), py::arg("ratio") = 2.0, py::arg("lora_rank") = 48, py::arg("vocab_size") = 65,
      "(block, non_block) trainable parameter counts of the default architecture.");

  py::class_<TransformerModel>(m, "Model")
      .def(py::init([](const std::string& variant, double ratio, std::int64_t vocab_size, std::uint64_t seed,
                       const py::kwargs& kw) {
             ModelConfig c;
             c.variant = parse_variant(variant);
             c.ratio = ratio;
             c.vocab_size = vocab_size;
             for (auto [key, value] : kw) {
               const auto k = key.cast<std::string>();
               if (k == "n_layers") c.n_layers = value.cast<std::int64_t>();
               else if (k == "d_model") c.d_model = value.cast<std::int64_t>();
               else if (k == "n_heads") c.n_heads = value.cast<std::int64_t>();
               else if (k == "context") c.context = value.cast<std::int64_t>();
               else if (k == "d_mlp") c.d_mlp = value.cast<std::int64_t>();
               else if (k == "lora_rank") c.lora_rank = value.cast<std::int64_t>();
               else throw py::type_error("unknown model option '" + k + "'");
             }
             return TransformerModel(c, seed);
           }),
           py::arg("variant") = "standard", py::arg("ratio") = 2.0, py::arg("vocab_size") = 65, py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return TransformerModel::load(p); }, py::arg("path"))
      .def("save", [](const TransformerModel& m, const std::filesystem::path& p) { m.save(p); }, py::arg("path"))
      .def(
          "forward",
          [](const TransformerModel& model, const IntArray& tokens) {
            if (tokens.ndim() != 2) throw py::value_error("tokens must be [batch, seq]");
            const auto b = tokens.shape(0), t = tokens.shape(1);
            Tensor logits;
            {
              NoGradScope no_grad;
              logits = model.forward({tokens.data(), static_cast<std::size_t>(tokens.size())}, b, t);
            }
            const auto v = logits.shape().back();
            py::array_t<float> out({b, t, v});
            std::copy(logits.data().begin(), logits.data().end(), out.mutable_data());
            return out;
          },
          py::arg("tokens"), "Logits [batch, seq, vocab] without recording gradients.")
      .def(
          "loss",
          [](const TransformerModel& model, const IntArray& inputs, const IntArray& targets) {
            if (inputs.ndim() != 2 || targets.ndim() != 2 || inputs.shape(0) != targets.shape(0) ||
                inputs.shape(1) != targets.shape(1)) {
              throw py::value_error("inputs and targets must both be [batch, seq]");
            }
            Batch batch;
            batch.batch = inputs.shape(0);
            batch.seq = inputs.shape(1);
            batch.inputs.assign(inputs.data(), inputs.data() + inputs.size());
            batch.targets.assign(targets.data(), targets.data() + targets.size());
            batch.offsets.assign(static_cast<std::size_t>(batch.batch), 0);
            NoGradScope no_grad;
            return static_cast<double>(model.loss(batch).item());
          },
          py::arg("inputs"), py::arg("targets"), "Mean next-token cross entropy.")
      .def("param_counts",
           [](const TransformerModel& m) {
             const auto p = m.param_counts();
             return py::make_tuple(p.block, p.non_block);
           })
      .def("weight",
           [](const TransformerModel& m, std::int64_t layer, const std::string& cls) {
             for (auto c : kLayerClasses) {
               if (to_string(c) == cls) return to_numpy(m.linear(layer, c).materialize());
             }
             throw py::value_error("unknown layer class '" + cls + "'");
           },
           py::arg("layer"), py::arg("cls"), "Materialized weight of a block linear, (out, in).")
      .def("rank_report", [](const TransformerModel& m) { return rank_report(m).to_json().dump(); });

  // --- experiment artifacts ---
  m.def("grid_cells",
        [](const std::vector<double>& ratios) {
          ExperimentConfig c;
          c.ratios = ratios;
          std::vector<std::string> ids;
          for (const auto& cell : enumerate_grid(c)) ids.push_back(cell.id);
          return ids;
        },
        py::arg("ratios") = std::vector<double>{2.0, 10.0, 20.0});
  m.def("emit_tables", &emit_tables, py::arg("out_dir"));
  m.def("emit_figure", &emit_figure, py::arg("out_dir"));
}
