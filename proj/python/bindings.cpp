// Python bindings: geometry helpers and completion from a trained workspace.

#include "rlgan/agent.hpp"
#include "rlgan/autoencoder.hpp"
#include "rlgan/checkpoint.hpp"
#include "rlgan/geometry.hpp"
#include "rlgan/latent_gan.hpp"
#include "rlgan/pipeline.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace rlgan;

namespace {

using CloudArray = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

PointCloud to_cloud(const Eigen::Ref<const CloudArray>& a) {
  std::vector<Point3> pts(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) pts[static_cast<std::size_t>(i)] = a.row(i).transpose();
  return PointCloud(std::move(pts));
}

CloudArray to_array(const PointCloud& c) {
  CloudArray a(static_cast<Eigen::Index>(c.size()), 3);
  for (std::size_t i = 0; i < c.size(); ++i) a.row(static_cast<Eigen::Index>(i)) = c[i].transpose();
  return a;
}

Checkpoint read_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw MissingModelError("checkpoint not found: " + path.string());
  return Checkpoint::load(path);
}

// Trained models read from a CLI workspace (<root>/checkpoints/*.ckpt).
class Workspace {
 public:
  Workspace(const std::string& root, const std::optional<std::string>& config,
            const std::map<std::string, std::string>& overrides, std::optional<std::uint64_t> seed)
      : root_(root) {
    cfg_ = config ? RunConfig::load(*config) : RunConfig{};
    for (const auto& [k, v] : overrides) cfg_.set(k, v);
    if (seed) cfg_.apply_seed(*seed);

    ae_ = std::make_unique<AutoEncoder>(cfg_.ae);
    ae_->load(read_checkpoint(ckpt("ae")));
    ae_->freeze();
    if (fs::exists(ckpt("gan"))) {
      gan_ = std::make_unique<LatentGan>(cfg_.gan);
      gan_->load(read_checkpoint(ckpt("gan")));
      gan_->freeze();
    }
    if (fs::exists(ckpt("agent"))) {
      agent_ = std::make_unique<Agent>(cfg_.agent, kGfvDim, cfg_.gan.latent_dim);
      agent_->load(read_checkpoint(ckpt("agent")));
    }
    pipeline_ = std::make_unique<Pipeline>(*ae_, gan_.get(), agent_ ? &agent_->actor() : nullptr);
  }

  Eigen::VectorXf encode(const Eigen::Ref<const CloudArray>& cloud) const { return ae_->encode(to_cloud(cloud)); }
  CloudArray decode(const Eigen::VectorXf& gfv) const { return to_array(ae_->decode(gfv)); }

  py::dict complete(const Eigen::Ref<const CloudArray>& partial, const std::string& mode) const {
    const CompletionResult r = pipeline_->complete(to_cloud(partial), parse_mode(mode));
    py::dict d;
    d["points"] = to_array(r.output);
    d["path"] = std::string(path_name(r.path));
    d["gfv"] = r.gfv;
    d["d_score_ae"] = std::isnan(r.d_score_ae) ? py::object(py::none()) : py::float_(r.d_score_ae);
    d["d_score_gan"] = std::isnan(r.d_score_gan) ? py::object(py::none()) : py::float_(r.d_score_gan);
    d["latency_ms"] = r.latency_ms;
    return d;
  }

  double discriminate(const Eigen::VectorXf& gfv) const {
    if (!gan_) throw MissingModelError("workspace has no GAN checkpoint");
    return gan_->discriminate(gfv);
  }

  bool has_gan() const { return gan_ != nullptr; }
  bool has_agent() const { return agent_ != nullptr; }

 private:
  fs::path ckpt(const char* name) const { return root_ / "checkpoints" / (std::string(name) + ".ckpt"); }

  fs::path root_;
  RunConfig cfg_;
  std::unique_ptr<AutoEncoder> ae_;
  std::unique_ptr<LatentGan> gan_;
  std::unique_ptr<Agent> agent_;
  std::unique_ptr<Pipeline> pipeline_;
};

}  // namespace

PYBIND11_MODULE(rlgan, m) {
  m.doc() = "Point cloud shape completion with an RL agent steering a latent GAN";

  py::register_exception<GeometryError>(m, "GeometryError", PyExc_ValueError);
  py::register_exception<MissingModelError>(m, "MissingModelError", PyExc_FileNotFoundError);

  m.attr("GFV_DIM") = kGfvDim;
  m.def("categories", [] {
    std::vector<std::string> names;
    for (ShapeCategory c : kAllCategories) names.emplace_back(category_name(c));
    return names;
  });
  m.def("sample_shape",
        [](const std::string& category, std::size_t n, std::uint64_t seed) {
          return to_array(sample_shape(parse_category(category), n, seed));
        },
        py::arg("category"), py::arg("n_points"), py::arg("seed"), "Normalized synthetic shape as an (n, 3) array.");
  m.def("corrupt_cloud",
        [](const Eigen::Ref<const CloudArray>& cloud, double ratio, std::uint64_t seed) {
          return to_array(corrupt_cloud(to_cloud(cloud), {ratio, seed}));
        },
        py::arg("cloud"), py::arg("missing_ratio"), py::arg("seed"),
        "Removes the round(ratio * n) points nearest a random centre point.");
  m.def("chamfer_distance",
        [](const Eigen::Ref<const CloudArray>& a, const Eigen::Ref<const CloudArray>& b) {
          return chamfer_distance(to_cloud(a), to_cloud(b));
        },
        py::arg("a"), py::arg("b"), "Sum of squared nearest-neighbour distances in both directions.");
  m.def("chamfer_normalized",
        [](const Eigen::Ref<const CloudArray>& a, const Eigen::Ref<const CloudArray>& b) {
          return chamfer_normalized(to_cloud(a), to_cloud(b));
        },
        py::arg("a"), py::arg("b"), "chamfer_distance divided by the total point count.");

  py::class_<Workspace>(m, "Workspace")
      .def(py::init<const std::string&, const std::optional<std::string>&, const std::map<std::string, std::string>&,
                    std::optional<std::uint64_t>>(),
           py::arg("root"), py::arg("config") = py::none(),
           py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("seed") = py::none())
      .def("encode", &Workspace::encode, py::arg("cloud"))
      .def("decode", &Workspace::decode, py::arg("gfv"))
      .def("complete", &Workspace::complete, py::arg("partial"), py::arg("mode") = "hybrid")
      .def("discriminate", &Workspace::discriminate, py::arg("gfv"))
      .def_property_readonly("has_gan", &Workspace::has_gan)
      .def_property_readonly("has_agent", &Workspace::has_agent);
}
