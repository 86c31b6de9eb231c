#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "memdpc/cli/commands.hpp"
#include "memdpc/core/error.hpp"
#include "memdpc/evaluation/embedding.hpp"
#include "memdpc/evaluation/retrieval.hpp"
#include "memdpc/loss/contrastive.hpp"
#include "memdpc/memory/memory.hpp"
#include "memdpc/videodata/flow.hpp"
#include "memdpc/videodata/synthetic.hpp"

namespace py = pybind11;
using namespace memdpc;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<evaluation::ClipEmbedding> embeddings(const Array& vectors, const std::vector<int>& labels) {
  if (vectors.ndim() != 2) throw py::value_error("embeddings must be a 2-d array");
  if (static_cast<std::size_t>(vectors.shape(0)) != labels.size()) {
    throw py::value_error("one label per embedding row is required");
  }
  std::vector<evaluation::ClipEmbedding> out;
  const auto n = vectors.shape(0), c = vectors.shape(1);
  for (py::ssize_t i = 0; i < n; ++i) {
    out.push_back({std::to_string(i), labels[static_cast<std::size_t>(i)],
                   std::vector<double>(vectors.data() + i * c, vectors.data() + (i + 1) * c)});
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the memdpc C++ library";

  static py::exception<Error> error_type(m, "MemdpcError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::handle(error_type.ptr())(std::string(to_string(e.kind())) + ": " + e.what());
      exc.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");

  m.def(
      "dense_contrastive_loss",
      [](const Array& predicted, const Array& target, bool normalized) {
        const auto r = loss::dense_contrastive_loss(to_tensor(predicted), to_tensor(target), normalized);
        py::dict d;
        d["loss"] = r.value;
        d["top1"] = r.top1_accuracy;
        d["num_candidates"] = r.num_candidates;
        return d;
      },
      py::arg("predicted"), py::arg("target"), py::arg("normalized") = false,
      "Dense InfoNCE over [B][S][C][H][W] arrays.");

  m.def(
      "contrastive_loss_oracle",
      [](const Array& predicted, const Array& target, bool normalized) {
        return loss::contrastive_loss_oracle(to_tensor(predicted), to_tensor(target), normalized);
      },
      py::arg("predicted"), py::arg("target"), py::arg("normalized") = false);

  m.def(
      "critic",
      [](const std::vector<double>& a, const std::vector<double>& b, bool normalized) {
        return memory::critic(a, b, normalized);
      },
      py::arg("predicted"), py::arg("observed"), py::arg("normalized") = false);

  m.def(
      "expect_future",
      [](const Array& p, const Array& bank) {
        const memory::MemoryBank mb(to_tensor(bank));
        return to_array(memory::expect_future(memory::AddressingDistribution{to_tensor(p)}, mb).values);
      },
      py::arg("p"), py::arg("bank"), "Convex combination of memory rows: p [k][H][W], bank [k][C] -> [C][H][W].");

  m.def("encode_displacement", &videodata::encode_displacement, py::arg("v"));

  m.def(
      "preprocess_flow",
      [](const Array& flow) {
        const auto f = videodata::preprocess_flow(to_tensor(flow));
        py::array_t<std::uint8_t> out({f.height, f.width, 3});
        std::copy(f.pixels.begin(), f.pixels.end(), out.mutable_data());
        return out;
      },
      py::arg("flow"), "flow [H][W][2] -> uint8 [H][W][3].");

  m.def(
      "gen_synthetic",
      [](const std::filesystem::path& out_dir, int num_classes, int clips_per_class, int clip_len,
         int frame_size, std::uint64_t seed, bool glitch, bool write_png) {
        videodata::SyntheticSpec s;
        s.num_classes = num_classes;
        s.clips_per_class = clips_per_class;
        s.clip_len = clip_len;
        s.frame_size = frame_size;
        s.seed = seed;
        s.glitch = glitch;
        s.write_png = write_png;
        return videodata::gen_synthetic(s, out_dir).entries.size();
      },
      py::arg("out_dir"), py::arg("num_classes") = 4, py::arg("clips_per_class") = 50, py::arg("clip_len") = 60,
      py::arg("frame_size") = 32, py::arg("seed") = 0, py::arg("glitch") = false, py::arg("write_png") = true,
      "Writes a moving-sprite dataset and returns the number of clips.");

  m.def(
      "read_embeddings",
      [](const std::filesystem::path& csv) {
        const auto e = evaluation::read_embeddings(csv);
        std::vector<std::string> ids;
        std::vector<int> labels;
        const py::ssize_t c = e.empty() ? 0 : static_cast<py::ssize_t>(e.front().vector.size());
        Array vectors({static_cast<py::ssize_t>(e.size()), c});
        for (std::size_t i = 0; i < e.size(); ++i) {
          ids.push_back(e[i].clip_id);
          labels.push_back(e[i].label);
          std::copy(e[i].vector.begin(), e[i].vector.end(), vectors.mutable_data() + i * c);
        }
        return py::make_tuple(ids, labels, vectors);
      },
      py::arg("csv"), "Returns (clip_ids, labels, vectors).");

  m.def(
      "retrieve",
      [](const Array& queries, const std::vector<int>& query_labels, const Array& gallery,
         const std::vector<int>& gallery_labels, const std::vector<int>& ks) {
        py::dict d;
        for (const auto& r : evaluation::retrieve(embeddings(queries, query_labels),
                                                  embeddings(gallery, gallery_labels), ks))
          d[py::int_(r.k)] = r.recall;
        return d;
      },
      py::arg("queries"), py::arg("query_labels"), py::arg("gallery"), py::arg("gallery_labels"),
      py::arg("ks") = std::vector<int>{1, 5, 10, 20}, "Cosine nearest-neighbour recall at k.");
}
