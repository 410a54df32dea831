#include "psp/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include "psp/autograd.hpp"
#include "psp/errors.hpp"
#include "psp/idx.hpp"
#include "psp/network.hpp"
#include "psp/optim.hpp"
#include "psp/regularizers.hpp"
#include "psp/rng.hpp"
#include "psp/tensor.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian");

namespace psp {

namespace {

/// Each batch allocates and frees large transient tensors; without raised
/// thresholds glibc returns those pages to the kernel every time, and the
/// refaults cost about a third of the step.
void retain_heap_pages() {
#if defined(__GLIBC__)
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)once;
#endif
}

std::string sanitize_token(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') {
            out += c;
        } else if (c == ',' || c == '(') {
            out += '-';
        }
    }
    return out;
}

/// "mlp(784,300,100,10)" -> {784,300,100,10}; empty if not an mlp token.
std::vector<int> parse_mlp_sizes(const std::string& model) {
    if (model.rfind("mlp(", 0) != 0 || model.back() != ')') return {};
    std::vector<int> sizes;
    std::string body = model.substr(4, model.size() - 5);
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            sizes.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError("bad mlp size '" + item + "' in " + model);
        }
    }
    if (sizes.size() < 2) throw ConfigError("mlp needs at least two sizes: " + model);
    return sizes;
}

template <typename T>
Network<T> build_model(const std::string& model) {
    if (model == "lenet5") return build_lenet5<T>();
    std::vector<int> sizes = parse_mlp_sizes(model);
    if (sizes.empty()) throw ConfigError("unknown model '" + model + "'");
    return build_mlp<T>(sizes);
}

std::string join_path(const std::string& dir, const std::string& name) {
    if (dir.empty()) return name;
    return dir.back() == '/' ? dir + name : dir + "/" + name;
}

/// %.17g round-trips doubles exactly, keeping rerun CSVs byte-identical.
std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename V>
void write_raw(std::ofstream& f, const V& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V read_raw(std::ifstream& f) {
    V v{};
    f.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!f) throw FormatError("checkpoint truncated");
    return v;
}

void write_string(std::ofstream& f, const std::string& s) {
    write_raw(f, static_cast<std::uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& f) {
    const auto len = read_raw<std::uint32_t>(f);
    std::string s(len, '\0');
    f.read(s.data(), static_cast<std::streamsize>(len));
    if (!f) throw FormatError("checkpoint truncated");
    return s;
}

constexpr char kCheckpointMagic[8] = {'P', 'S', 'P', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_tensor_payload(std::ofstream& f, const Tensor<T>& t) {
    write_raw(f, static_cast<std::uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) write_raw(f, static_cast<std::int32_t>(t.extent(d)));
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <typename T>
Tensor<T> read_tensor_payload(std::ifstream& f) {
    const auto rank = read_raw<std::uint32_t>(f);
    if (rank > 8) throw FormatError("checkpoint tensor rank " + std::to_string(rank));
    std::vector<int> shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(read_raw<std::int32_t>(f));
    Tensor<T> t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(T)));
    if (!f) throw FormatError("checkpoint truncated inside a tensor payload");
    return t;
}

template <typename T>
struct CheckpointData {
    std::string model;
    std::uint32_t epoch = 0;
    std::uint64_t seed = 0;
    std::vector<Parameter<T>> params;
    std::vector<Tensor<T>> velocity;  // empty when the run used no momentum state
};

template <typename T>
void save_checkpoint(const std::string& path, const std::string& model, std::uint32_t epoch,
                     std::uint64_t seed, const std::vector<Parameter<T>>& params,
                     const std::vector<Tensor<T>>& velocity) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path);
    f.write(kCheckpointMagic, sizeof kCheckpointMagic);
    write_raw(f, kCheckpointVersion);
    write_raw(f, static_cast<std::uint8_t>(sizeof(T)));
    write_string(f, model);
    write_raw(f, epoch);
    write_raw(f, seed);
    write_raw(f, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        write_string(f, p.name);
        write_tensor_payload(f, p.value);
    }
    write_raw(f, static_cast<std::uint8_t>(velocity.empty() ? 0 : 1));
    for (const auto& v : velocity) write_tensor_payload(f, v);
    if (!f) throw DataError("short write on " + path);
}

/// Reads past the magic/version and returns the precision byte so the
/// caller can dispatch; the stream is left positioned at the model string.
inline std::uint8_t open_checkpoint(const std::string& path, std::ifstream& f) {
    f.open(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    char magic[8];
    f.read(magic, sizeof magic);
    if (!f || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw FormatError(path + ": not a checkpoint (bad magic)");
    }
    const auto version = read_raw<std::uint32_t>(f);
    if (version != kCheckpointVersion) {
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto precision = read_raw<std::uint8_t>(f);
    if (precision != 4 && precision != 8) {
        throw FormatError(path + ": bad precision byte " + std::to_string(precision));
    }
    return precision;
}

template <typename T>
CheckpointData<T> load_checkpoint_body(std::ifstream& f) {
    CheckpointData<T> ckpt;
    ckpt.model = read_string(f);
    ckpt.epoch = read_raw<std::uint32_t>(f);
    ckpt.seed = read_raw<std::uint64_t>(f);
    const auto count = read_raw<std::uint32_t>(f);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = read_string(f);
        Tensor<T> value = read_tensor_payload<T>(f);
        ckpt.params.emplace_back(std::move(name), std::move(value));
    }
    if (read_raw<std::uint8_t>(f) != 0) {
        for (std::uint32_t i = 0; i < count; ++i) {
            ckpt.velocity.push_back(read_tensor_payload<T>(f));
        }
    }
    return ckpt;
}

template <typename T>
Dataset<T> load_split(const TrainConfig& config, bool train_split) {
    const std::string dir = join_path(config.data_dir, config.dataset);
    const char* images = train_split ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
    const char* labels = train_split ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
    return load_dataset<T>(join_path(dir, images), join_path(dir, labels));
}

/// Shifts both splits onto train-set statistics; loaders hand over /255
/// pixels, so this is the optional second normalization stage.
template <typename T>
void standardize(Tensor<T>& train, Tensor<T>& test) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
        const double v = static_cast<double>(train[i]);
        sum += v;
        sq += v * v;
    }
    const double mean = sum / static_cast<double>(train.size());
    const double var = sq / static_cast<double>(train.size()) - mean * mean;
    const T mu = static_cast<T>(mean);
    const T inv = static_cast<T>(1.0 / std::sqrt(var > 0.0 ? var : 1.0));
    for (std::size_t i = 0; i < train.size(); ++i) train[i] = (train[i] - mu) * inv;
    for (std::size_t i = 0; i < test.size(); ++i) test[i] = (test[i] - mu) * inv;
}

/// MLPs consume flattened rows; conv stacks consume image blocks.
template <typename T>
void shape_for_model(const Network<T>& net, Tensor<T>& images) {
    if (net.input_shape.size() == 1) {
        int prod = 1;
        for (int i = 1; i < images.rank(); ++i) prod *= images.extent(i);
        if (prod != net.input_shape[0]) {
            throw ConfigError("dataset sample size " + std::to_string(prod) +
                              " does not match model input " +
                              std::to_string(net.input_shape[0]));
        }
        images = images.reshaped({images.extent(0), prod});
    }
}

/// Error percentage plus the z² mean over the same pass (one forward per
/// chunk, shared between both quantities).
template <typename T>
std::pair<double, double> evaluate_error_and_zsq(Network<T>& net, const Tensor<T>& images,
                                                 const std::vector<int>& labels,
                                                 int chunk = 200) {
    const int n = images.extent(0);
    if (n == 0) throw DataError("evaluate: empty dataset");
    const std::size_t sample = images.size() / static_cast<std::size_t>(n);
    std::size_t wrong = 0;
    double zsq_total = 0.0;
    std::size_t zsq_count = 0;
    for (int at = 0; at < n; at += chunk) {
        const int b = at + chunk <= n ? chunk : n - at;
        std::vector<int> shape = images.shape();
        shape[0] = b;
        std::vector<T> slab(images.data() + static_cast<std::size_t>(at) * sample,
                            images.data() + static_cast<std::size_t>(at + b) * sample);
        Tape<T> tape;
        ForwardRecord<T> rec = forward_record(net, tape, Tensor<T>(shape, std::move(slab)));
        const Tensor<T>& logits = tape.value(rec.logits);
        const int classes = logits.extent(1);
        for (int i = 0; i < b; ++i) {
            const int pred =
                argmax_row(logits.data() + static_cast<std::size_t>(i) * classes, classes);
            wrong += pred != labels[static_cast<std::size_t>(at + i)];
        }
        for (const auto& trace : rec.traces) {
            if (trace.z < 0) continue;
            const Tensor<T>& z = tape.value(trace.z);
            for (std::size_t i = 0; i < z.size(); ++i) {
                zsq_total += static_cast<double>(z[i]) * static_cast<double>(z[i]);
            }
            zsq_count += z.size();
        }
    }
    return {100.0 * static_cast<double>(wrong) / static_cast<double>(n),
            zsq_count ? zsq_total / static_cast<double>(zsq_count) : 0.0};
}

template <typename T>
MetricsRecord train_impl(const TrainConfig& config) {
    retain_heap_pages();
    RegularizerKind<T> reg{reg_variant_from_string(config.regularizer),
                           static_cast<T>(config.lambda)};
    reg.validate();
    if (config.batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (config.epochs < 0) throw ConfigError("epochs must be >= 0");

    SgdConfig<T> sgd;
    sgd.eta = static_cast<T>(config.eta);
    sgd.momentum = static_cast<T>(config.momentum);
    sgd.schedule = schedule_from_string(config.schedule);
    sgd.warm_epochs = config.warm_epochs;
    sgd.validate();

    Dataset<T> train_set = load_split<T>(config, true);
    Dataset<T> test_set = load_split<T>(config, false);
    if (config.normalization == "meanstd") {
        standardize(train_set.images, test_set.images);
    } else if (config.normalization != "div255") {
        throw ConfigError("normalization must be div255 or meanstd, got '" +
                          config.normalization + "'");
    }

    Network<T> net = build_model<T>(config.model);
    shape_for_model(net, train_set.images);
    shape_for_model(net, test_set.images);
    init_params(net, config.seed);

    if (config.train_limit > 0 && config.train_limit < train_set.size()) {
        const int n = config.train_limit;
        const std::size_t sample =
            train_set.images.size() / static_cast<std::size_t>(train_set.size());
        std::vector<int> shape = train_set.images.shape();
        shape[0] = n;
        std::vector<T> slab(train_set.images.data(),
                            train_set.images.data() + static_cast<std::size_t>(n) * sample);
        train_set.images = Tensor<T>(shape, std::move(slab));
        train_set.labels.resize(static_cast<std::size_t>(n));
    }

    std::filesystem::create_directories(config.output_dir);
    std::ofstream csv(config.csv_path(), std::ios::trunc);
    if (!csv) throw DataError("cannot write " + config.csv_path());
    csv << kMetricsCsvHeader << "\n";

    OptState<T> state;
    state.ensure(net.params);

    // reused λ·θ buffer for the analytic l2 path
    std::vector<Tensor<T>> reg_grads;
    if (reg.variant == RegVariant::l2) {
        for (const auto& p : net.params) reg_grads.emplace_back(p.value.shape());
    }

    MetricsRecord last;
    const int n_train = train_set.size();
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const T lr = lr_at_epoch(sgd, epoch);
        SgdConfig<T> step_cfg = sgd;
        step_cfg.eta = lr;

        double loss_sum = 0.0, penalty_sum = 0.0, zsq_sum = 0.0;
        const auto batches =
            batch_iter(n_train, config.batch_size, mix_seed(config.seed, 0x9e000000ULL + epoch));
        for (const auto& indices : batches) {
            auto [batch, labels] = gather_batch(train_set.images, train_set.labels, indices);
            Tape<T> tape;
            ForwardRecord<T> rec = forward_record(net, tape, std::move(batch));
            auto loss = tape.cross_entropy(rec.logits, labels);
            const double loss_v = static_cast<double>(tape.value(loss)[0]);
            if (!std::isfinite(loss_v)) {
                throw DivergedError("loss is not finite at epoch " + std::to_string(epoch));
            }
            auto objective = loss;
            double penalty_v = 0.0;
            switch (reg.variant) {
                case RegVariant::none:
                    break;
                case RegVariant::l2:
                    penalty_v = static_cast<double>(l2_penalty(net.params));
                    break;
                case RegVariant::psp: {
                    // one traversal differentiates loss and penalty together;
                    // the penalty joins the objective with weight λ, so the
                    // step applies η·λ to its gradient and the regularization
                    // pressure tracks the learning-rate schedule
                    auto pnode = psp_penalty_node(rec);
                    penalty_v = static_cast<double>(tape.value(pnode)[0]);
                    objective = tape.add(loss, tape.scale(pnode, reg.lambda));
                    break;
                }
            }
            if (!std::isfinite(penalty_v)) {
                throw DivergedError("penalty is not finite at epoch " + std::to_string(epoch));
            }
            zero_grads(net.params);
            tape.backward(objective);
            if (reg.variant == RegVariant::l2) {
                for (std::size_t i = 0; i < net.params.size(); ++i) {
                    const Tensor<T>& v = net.params[i].value;
                    Tensor<T>& g = reg_grads[i];
                    for (std::size_t j = 0; j < v.size(); ++j) g[j] = reg.lambda * v[j];
                }
                sgd_step(net.params, state, step_cfg, &reg_grads);
            } else {
                sgd_step(net.params, state, step_cfg);
            }
            loss_sum += loss_v;
            penalty_sum += penalty_v;
            zsq_sum += static_cast<double>(mean_z_squared(rec));
        }

        const double nb = static_cast<double>(batches.size());
        MetricsRecord row;
        row.epoch = epoch;
        row.lr = static_cast<double>(lr);
        row.train_loss = loss_sum / nb;
        row.train_penalty = penalty_sum / nb;
        row.test_error_pct = predict_error(net, test_set.images, test_set.labels);
        row.mean_z_sq = zsq_sum / nb;
        csv << format_metrics_row(row) << "\n";
        csv.flush();
        last = row;
    }

    if (config.epochs == 0) {
        auto [err, zsq] = evaluate_error_and_zsq(net, test_set.images, test_set.labels);
        last.epoch = 0;
        last.lr = static_cast<double>(lr_at_epoch(sgd, 0));
        last.test_error_pct = err;
        last.mean_z_sq = zsq;
        csv << format_metrics_row(last) << "\n";
    }
    csv.flush();
    if (!csv) throw DataError("short write on " + config.csv_path());

    save_checkpoint(config.checkpoint_path(), config.model,
                    static_cast<std::uint32_t>(config.epochs), config.seed, net.params,
                    sgd.momentum > T(0) ? state.velocity : std::vector<Tensor<T>>{});
    return last;
}

template <typename T>
double evaluate_impl(std::ifstream& f, const std::string& dataset, const std::string& data_dir) {
    CheckpointData<T> ckpt = load_checkpoint_body<T>(f);
    Network<T> net = build_model<T>(ckpt.model);
    if (ckpt.params.size() != net.params.size()) {
        throw FormatError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                          " tensors, model " + ckpt.model + " needs " +
                          std::to_string(net.params.size()));
    }
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        if (!ckpt.params[i].value.same_shape(net.params[i].value)) {
            throw ConfigError("checkpoint tensor " + ckpt.params[i].name + " shape " +
                              ckpt.params[i].value.shape_str() + " does not match model shape " +
                              net.params[i].value.shape_str());
        }
        net.params[i].value = ckpt.params[i].value;
    }
    TrainConfig paths;
    paths.dataset = dataset;
    paths.data_dir = data_dir;
    Dataset<T> test_set = load_split<T>(paths, false);
    shape_for_model(net, test_set.images);
    return predict_error(net, test_set.images, test_set.labels);
}

}  // namespace

std::string TrainConfig::effective_run_name() const {
    if (!run_name.empty()) return run_name;
    return dataset + "-" + sanitize_token(model) + "-" + regularizer + "-seed" +
           std::to_string(seed);
}

std::string TrainConfig::csv_path() const {
    return join_path(output_dir, effective_run_name() + ".csv");
}

std::string TrainConfig::checkpoint_path() const {
    return join_path(output_dir, effective_run_name() + ".ckpt");
}

std::string format_metrics_row(const MetricsRecord& r) {
    return std::to_string(r.epoch) + "," + format_double(r.lr) + "," +
           format_double(r.train_loss) + "," + format_double(r.train_penalty) + "," +
           format_double(r.test_error_pct) + "," + format_double(r.mean_z_sq);
}

void apply_config_kv(TrainConfig& config, const std::string& key, const std::string& value) {
    try {
        if (key == "model") config.model = value;
        else if (key == "dataset") config.dataset = value;
        else if (key == "data-dir") config.data_dir = value;
        else if (key == "regularizer") config.regularizer = value;
        else if (key == "normalization") config.normalization = value;
        else if (key == "lambda") config.lambda = std::stod(value);
        else if (key == "eta") config.eta = std::stod(value);
        else if (key == "momentum") config.momentum = std::stod(value);
        else if (key == "batch-size") config.batch_size = std::stoi(value);
        else if (key == "epochs") config.epochs = std::stoi(value);
        else if (key == "seed") config.seed = std::stoull(value);
        else if (key == "precision") config.precision = value;
        else if (key == "schedule") config.schedule = value;
        else if (key == "warm-epochs") config.warm_epochs = std::stoi(value);
        else if (key == "output-dir") config.output_dir = value;
        else if (key == "run-name") config.run_name = value;
        else if (key == "train-limit") config.train_limit = std::stoi(value);
        else throw ConfigError("unknown config key '" + key + "'");
    } catch (const std::invalid_argument&) {
        throw ConfigError("bad value '" + value + "' for config key '" + key + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError("value '" + value + "' out of range for config key '" + key + "'");
    }
}

void load_config_file(const std::string& path, TrainConfig& config) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        apply_config_kv(config, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
}

MetricsRecord train(const TrainConfig& config) {
    if (config.precision == "f64") return train_impl<double>(config);
    if (config.precision == "f32") return train_impl<float>(config);
    throw ConfigError("precision must be f32 or f64, got '" + config.precision + "'");
}

double evaluate_checkpoint(const std::string& checkpoint_path, const std::string& dataset,
                           const std::string& data_dir) {
    retain_heap_pages();
    std::ifstream f;
    const std::uint8_t precision = open_checkpoint(checkpoint_path, f);
    return precision == 8 ? evaluate_impl<double>(f, dataset, data_dir)
                          : evaluate_impl<float>(f, dataset, data_dir);
}

namespace {

template <typename T>
std::vector<std::string> export_histograms_impl(std::ifstream& f,
                                                const std::string& checkpoint_path,
                                                const std::string& output_dir) {
    CheckpointData<T> ckpt = load_checkpoint_body<T>(f);
    std::filesystem::create_directories(output_dir);
    const std::string stem = std::filesystem::path(checkpoint_path).stem().string();
    std::vector<std::string> files;
    for (const auto& p : ckpt.params) {
        if (p.name.size() < 2 || p.name.substr(p.name.size() - 2) != ".w") continue;
        const std::string layer = p.name.substr(0, p.name.size() - 2);
        double lo = static_cast<double>(p.value[0]), hi = lo;
        for (std::size_t i = 1; i < p.value.size(); ++i) {
            const double v = static_cast<double>(p.value[i]);
            lo = v < lo ? v : lo;
            hi = v > hi ? v : hi;
        }
        if (lo == hi) {  // all-equal layer: center the single occupied bin
            lo -= 0.5;
            hi += 0.5;
        }
        constexpr int kBins = 101;
        const double width = (hi - lo) / kBins;
        std::vector<std::size_t> counts(kBins, 0);
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            int bin = static_cast<int>((static_cast<double>(p.value[i]) - lo) / width);
            bin = bin < 0 ? 0 : (bin >= kBins ? kBins - 1 : bin);
            ++counts[static_cast<std::size_t>(bin)];
        }
        const std::string path = join_path(output_dir, stem + "." + layer + ".hist.csv");
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw DataError("cannot write " + path);
        out << "bin_center,count\n";
        for (int b = 0; b < kBins; ++b) {
            out << format_double(lo + (b + 0.5) * width) << ","
                << counts[static_cast<std::size_t>(b)] << "\n";
        }
        if (!out) throw DataError("short write on " + path);
        files.push_back(path);
    }
    return files;
}

/// Final test_error_pct from an existing metrics CSV, or -1 when the file
/// is absent or holds no data rows.
double final_error_from_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) return -1.0;
    std::string line, last_data;
    if (!std::getline(f, line) || line != kMetricsCsvHeader) return -1.0;
    while (std::getline(f, line)) {
        if (!line.empty()) last_data = line;
    }
    if (last_data.empty()) return -1.0;
    std::stringstream ss(last_data);
    std::string field;
    for (int i = 0; i < 5; ++i) {
        if (!std::getline(ss, field, ',')) return -1.0;
    }
    try {
        return std::stod(field);
    } catch (const std::exception&) {
        return -1.0;
    }
}

}  // namespace

std::vector<std::string> export_histograms(const std::string& checkpoint_path,
                                           const std::string& output_dir) {
    std::ifstream f;
    const std::uint8_t precision = open_checkpoint(checkpoint_path, f);
    return precision == 8 ? export_histograms_impl<double>(f, checkpoint_path, output_dir)
                          : export_histograms_impl<float>(f, checkpoint_path, output_dir);
}

std::vector<CompareRow> compare_runs(const std::vector<TrainConfig>& configs,
                                     std::ostream& out) {
    if (configs.size() < 2) throw ConfigError("compare needs at least two configurations");
    std::vector<CompareRow> rows;
    for (const auto& cfg : configs) {
        CompareRow row;
        row.name = cfg.effective_run_name();
        const double existing = final_error_from_csv(cfg.csv_path());
        row.final_test_error_pct = existing >= 0.0 ? existing : train(cfg).test_error_pct;
        rows.push_back(row);
    }
    std::size_t name_width = 4;
    for (const auto& r : rows) name_width = std::max(name_width, r.name.size());
    out << "run" << std::string(name_width - 3 + 2, ' ') << "final_test_error_pct\n";
    char buf[32];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.2f", r.final_test_error_pct);
        out << r.name << std::string(name_width - r.name.size() + 2, ' ') << buf << "\n";
    }
    const std::string summary_path = join_path(configs.front().output_dir, "compare.csv");
    std::ofstream csv(summary_path, std::ios::trunc);
    if (!csv) throw DataError("cannot write " + summary_path);
    csv << "run,final_test_error_pct\n";
    for (const auto& r : rows) {
        csv << r.name << "," << format_double(r.final_test_error_pct) << "\n";
    }
    return rows;
}

}  // namespace psp
