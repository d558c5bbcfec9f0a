#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "hpt/analysis.hpp"
#include "hpt/grad_check.hpp"
#include "hpt/hist.hpp"
#include "hpt/train.hpp"

namespace py = pybind11;
using namespace hpt;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const DoubleArray& arr) {
  Shape shape(static_cast<std::size_t>(arr.ndim()));
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
    shape[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arr.shape(i));
  }
  std::vector<double> data(arr.data(), arr.data() + arr.size());
  return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> dims(t.shape().begin(), t.shape().end());
  py::array_t<double> arr(dims);
  const auto v = t.values();
  std::copy(v.begin(), v.end(), arr.mutable_data());
  return arr;
}

Tensor as_tensor(const py::object& obj) {
  if (py::isinstance<Tensor>(obj)) return obj.cast<Tensor>();
  return tensor_from_array(obj.cast<DoubleArray>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "histogram-based parameter-efficient tuning core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ValueError>(m, "ValueError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<TruncationError>(m, "TruncationError", PyExc_IOError);
  py::register_exception<CompatError>(m, "CompatError", PyExc_RuntimeError);

  py::class_<Tensor>(m, "Tensor")
      .def(py::init([](const DoubleArray& arr) { return tensor_from_array(arr); }), py::arg("array"))
      .def_static("scalar", &Tensor::scalar, py::arg("value"))
      .def_property_readonly("shape",
                             [](const Tensor& t) {
                               py::tuple out(t.rank());
                               for (std::size_t i = 0; i < t.rank(); ++i) out[i] = t.extent(i);
                               return out;
                             })
      .def_property_readonly("size", &Tensor::size)
      .def("numpy", &tensor_to_array)
      .def("item", &Tensor::item)
      .def("__repr__", [](const Tensor& t) {
        return "Tensor(shape=" + shape_str(t.shape()) + ")";
      });

  // elementwise / reduction / structural operations
  m.def("gelu", [](const py::object& x) { return gelu(as_tensor(x)); }, py::arg("x"));
  m.def("softmax",
        [](const py::object& x, std::size_t axis) { return softmax(as_tensor(x), axis); },
        py::arg("x"), py::arg("axis"));
  m.def("matmul",
        [](const py::object& a, const py::object& b) { return matmul(as_tensor(a), as_tensor(b)); },
        py::arg("a"), py::arg("b"));
  m.def("layer_norm",
        [](const py::object& x, const py::object& gain, const py::object& bias, double eps) {
          return layer_norm(as_tensor(x), as_tensor(gain), as_tensor(bias), eps);
        },
        py::arg("x"), py::arg("gain"), py::arg("bias"), py::arg("eps") = 1e-5);
  m.def("reduce_mean",
        [](const py::object& x, std::size_t axis) { return reduce_mean(as_tensor(x), axis); },
        py::arg("x"), py::arg("axis"));
  m.def("sum", [](const py::object& x) { return sum(as_tensor(x)); }, py::arg("x"));
  m.def("cross_entropy",
        [](const py::object& logits, std::size_t label) {
          return cross_entropy(as_tensor(logits), label);
        },
        py::arg("logits"), py::arg("label"));

  // the histogram branch as a standalone layer
  py::class_<HistogramLayer>(m, "HistogramLayer")
      .def(py::init([](std::size_t bins, std::size_t dim, std::uint64_t seed) {
             auto h = std::make_unique<HistogramLayer>("hist", bins, dim);
             Rng rng(seed);
             hist_init(*h, rng);
             return h;
           }),
           py::arg("bins"), py::arg("dim"), py::arg("seed") = 1)
      .def_readonly("bins", &HistogramLayer::bins)
      .def_readonly("dim", &HistogramLayer::dim)
      .def_property_readonly("param_count", &HistogramLayer::param_count)
      .def("__call__",
           [](const HistogramLayer& h, const py::object& x) { return hist_forward(h, as_tensor(x)); },
           py::arg("x"));
  m.def("hist_forward",
        [](const HistogramLayer& h, const py::object& x) { return hist_forward(h, as_tensor(x)); },
        py::arg("layer"), py::arg("x"));

  py::enum_<Method>(m, "Method")
      .value("full_finetune", Method::full_finetune)
      .value("linear_probe", Method::linear_probe)
      .value("adapter", Method::adapter)
      .value("hpt", Method::hpt)
      .value("lora", Method::lora)
      .value("ssf", Method::ssf);
  py::enum_<HistPlacement>(m, "HistPlacement")
      .value("parallel_mhsa", HistPlacement::parallel_mhsa)
      .value("parallel_ffn", HistPlacement::parallel_ffn)
      .value("both", HistPlacement::both);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](std::size_t dim, std::size_t heads, std::size_t blocks, std::size_t feat,
                       std::size_t max_seq, std::size_t classes) {
             return ModelConfig{dim, heads, blocks, feat, max_seq, classes};
           }),
           py::arg("dim") = 64, py::arg("heads") = 4, py::arg("blocks") = 4, py::arg("feat") = 16,
           py::arg("max_seq") = 32, py::arg("classes") = 4)
      .def_readwrite("dim", &ModelConfig::dim)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("blocks", &ModelConfig::blocks)
      .def_readwrite("feat", &ModelConfig::feat)
      .def_readwrite("max_seq", &ModelConfig::max_seq)
      .def_readwrite("classes", &ModelConfig::classes);

  py::class_<PetlConfig>(m, "PetlConfig")
      .def(py::init([](Method method, bool shared, std::size_t rate, std::size_t bins,
                       HistPlacement placement, std::size_t rank,
                       const std::set<std::string>& insertions) {
             return PetlConfig{method, shared, rate, bins, placement, rank, insertions};
           }),
           py::arg("method") = Method::linear_probe, py::arg("shared") = true,
           py::arg("rate") = 256, py::arg("bins") = 8,
           py::arg("placement") = HistPlacement::parallel_mhsa, py::arg("rank") = 6,
           py::arg("insertions") = std::set<std::string>{"ln1"})
      .def_readwrite("method", &PetlConfig::method)
      .def_readwrite("shared", &PetlConfig::shared)
      .def_readwrite("rate", &PetlConfig::rate)
      .def_readwrite("bins", &PetlConfig::bins)
      .def_readwrite("placement", &PetlConfig::placement)
      .def_readwrite("rank", &PetlConfig::rank)
      .def_readwrite("insertions", &PetlConfig::insertions);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init([](double lr, double weight_decay, std::size_t batch_size,
                       std::size_t max_epochs, std::size_t patience, std::uint64_t seed) {
             TrainConfig c;
             c.lr = lr;
             c.weight_decay = weight_decay;
             c.batch_size = batch_size;
             c.max_epochs = max_epochs;
             c.patience = patience;
             c.seed = seed;
             return c;
           }),
           py::arg("lr") = 1e-3, py::arg("weight_decay") = 0.01, py::arg("batch_size") = 16,
           py::arg("max_epochs") = 200, py::arg("patience") = 20, py::arg("seed") = 0)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("max_epochs", &TrainConfig::max_epochs)
      .def_readwrite("patience", &TrainConfig::patience)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init([](std::size_t classes, std::size_t train_per_class, std::size_t val_per_class,
                       std::size_t test_per_class, std::size_t seq, std::size_t feat, double delta0,
                       double delta_step, double sigma, std::string shift_profile,
                       std::uint64_t seed) {
             return SyntheticSpec{classes,    train_per_class, val_per_class,
                                  test_per_class, seq,         feat,
                                  delta0,     delta_step,      sigma,
                                  std::move(shift_profile),    seed};
           }),
           py::arg("classes") = 4, py::arg("train_per_class") = 200, py::arg("val_per_class") = 100,
           py::arg("test_per_class") = 100, py::arg("seq") = 16, py::arg("feat") = 8,
           py::arg("delta0") = 0.5, py::arg("delta_step") = 0.5, py::arg("sigma") = 0.2,
           py::arg("shift_profile") = "none", py::arg("seed") = 1)
      .def_readwrite("classes", &SyntheticSpec::classes)
      .def_readwrite("train_per_class", &SyntheticSpec::train_per_class)
      .def_readwrite("val_per_class", &SyntheticSpec::val_per_class)
      .def_readwrite("test_per_class", &SyntheticSpec::test_per_class)
      .def_readwrite("seq", &SyntheticSpec::seq)
      .def_readwrite("feat", &SyntheticSpec::feat)
      .def_readwrite("delta0", &SyntheticSpec::delta0)
      .def_readwrite("delta_step", &SyntheticSpec::delta_step)
      .def_readwrite("sigma", &SyntheticSpec::sigma)
      .def_readwrite("shift_profile", &SyntheticSpec::shift_profile)
      .def_readwrite("seed", &SyntheticSpec::seed);

  py::class_<Split>(m, "Split")
      .def_property_readonly("frames", [](const Split& s) { return tensor_to_array(s.frames); })
      .def_readonly("labels", &Split::labels)
      .def("__len__", &Split::size)
      .def_property_readonly("seq", &Split::seq)
      .def_property_readonly("feat", &Split::feat)
      .def("sample", [](const Split& s, std::size_t i) { return s.sample(i); }, py::arg("i"));

  py::class_<DatasetBundle>(m, "DatasetBundle")
      .def_readonly("classes", &DatasetBundle::classes)
      .def_readonly("train", &DatasetBundle::train)
      .def_readonly("val", &DatasetBundle::val)
      .def_readonly("test", &DatasetBundle::test)
      .def_readonly("manifest", &DatasetBundle::manifest);

  m.def("gen_synthetic", &gen_synthetic, py::arg("spec"));
  m.def("write_dataset", &write_dataset, py::arg("path"), py::arg("split"), py::arg("classes"));
  m.def("read_dataset", &read_dataset, py::arg("path"));

  py::class_<EncoderModel>(m, "EncoderModel")
      .def(py::init([](const ModelConfig& cfg, const PetlConfig& petl, std::uint64_t seed) {
             Rng rng(seed);
             return std::make_unique<EncoderModel>(cfg, petl, rng);
           }),
           py::arg("config"), py::arg("petl") = PetlConfig{}, py::arg("seed") = 0)
      .def_readonly("config", &EncoderModel::cfg)
      .def("__call__",
           [](EncoderModel& model, const py::object& frames) {
             return model_forward(model, as_tensor(frames));
           },
           py::arg("frames"))
      .def("capture_features", [](EncoderModel& model, const py::object& frames) {
        return capture_features(model, as_tensor(frames));
      });

  m.def("model_forward",
        [](EncoderModel& model, const py::object& frames) {
          return model_forward(model, as_tensor(frames));
        },
        py::arg("model"), py::arg("frames"));

  py::class_<EpochRow>(m, "EpochRow")
      .def_readonly("epoch", &EpochRow::epoch)
      .def_readonly("train_loss", &EpochRow::train_loss)
      .def_readonly("val_loss", &EpochRow::val_loss)
      .def_readonly("val_acc", &EpochRow::val_acc);

  py::class_<RunReport>(m, "RunReport")
      .def_readonly("epochs", &RunReport::epochs)
      .def_readonly("stopping_epoch", &RunReport::stopping_epoch)
      .def_readonly("best_epoch", &RunReport::best_epoch)
      .def_readonly("best_val_loss", &RunReport::best_val_loss)
      .def_readonly("test_loss", &RunReport::test_loss)
      .def_readonly("test_accuracy", &RunReport::test_accuracy)
      .def_readonly("trainable_params", &RunReport::trainable_params)
      .def_readonly("wall_seconds", &RunReport::wall_seconds)
      .def("loss_csv", &loss_csv_string)
      .def("json", &run_report_json);

  m.def("train", &train, py::arg("model"), py::arg("data"), py::arg("config"));
  m.def("evaluate", &evaluate, py::arg("model"), py::arg("split"));
  m.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"),
        py::arg("manifest") = std::string());
  m.def("load_checkpoint", &load_checkpoint, py::arg("model"), py::arg("path"));
  m.def("read_checkpoint_manifest", &read_checkpoint_manifest, py::arg("path"));

  py::class_<AuditRow>(m, "AuditRow")
      .def_readonly("module", &AuditRow::module)
      .def_readonly("count", &AuditRow::count)
      .def_readonly("trainable", &AuditRow::trainable);

  py::class_<ParamAudit>(m, "ParamAudit")
      .def_readonly("modules", &ParamAudit::modules)
      .def_readonly("trainable", &ParamAudit::trainable)
      .def_readonly("frozen", &ParamAudit::frozen)
      .def_readonly("closed_form", &ParamAudit::closed_form)
      .def_property_readonly("reference",
                             [](const ParamAudit& a) -> py::object {
                               if (!a.reference) return py::none();
                               return py::make_tuple(a.reference->row, a.reference->value);
                             })
      .def("total", &ParamAudit::total)
      .def("table", &audit_table_string)
      .def("csv", &audit_csv_string);

  m.def("count_params", &count_params, py::arg("model"), py::arg("trainable_only") = false);

  m.def("cka_linear",
        [](const py::object& a, const py::object& b) {
          return cka_linear(as_tensor(a), as_tensor(b));
        },
        py::arg("a"), py::arg("b"));
  m.def("similarity_report",
        [](EncoderModel& candidate, EncoderModel& reference, const Split& probe) {
          return similarity_report(candidate, reference, probe).scores;
        },
        py::arg("candidate"), py::arg("reference"), py::arg("probe"));

  m.def("grad_check_model",
        [](EncoderModel& model, const py::object& frames, std::size_t label) {
          const Tensor x = as_tensor(frames);
          const auto f = [&] { return cross_entropy(model_forward(model, x), label); };
          const ParamRefs params = model.trainable_params();
          return grad_check(f, params);
        },
        py::arg("model"), py::arg("frames"), py::arg("label"),
        "max relative error between analytic and central-difference gradients");
}
