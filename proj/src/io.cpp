#include "attriprompt/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

namespace attriprompt {

namespace {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

constexpr char k_dataset_magic[5] = {'A', 'T', 'P', 'D', '1'};
constexpr char k_checkpoint_magic[5] = {'A', 'T', 'P', 'C', '1'};

void write_bytes(std::ostream& out, const void* data, std::size_t len) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
}

void write_u32(std::ostream& out, std::uint32_t v) { write_bytes(out, &v, sizeof(v)); }
void write_u64(std::ostream& out, std::uint64_t v) { write_bytes(out, &v, sizeof(v)); }

void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    write_bytes(out, s.data(), s.size());
}

struct Reader {
    explicit Reader(const std::string& path) : stream(path, std::ios::binary), name(path) {
        if (!stream) throw format_error("cannot open " + path);
    }

    void bytes(void* data, std::size_t len, const char* what) {
        stream.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
        if (static_cast<std::size_t>(stream.gcount()) != len) {
            throw format_error(name + ": truncated while reading " + std::string(what));
        }
    }

    std::uint32_t u32(const char* what) {
        std::uint32_t v;
        bytes(&v, sizeof(v), what);
        return v;
    }

    std::uint64_t u64(const char* what) {
        std::uint64_t v;
        bytes(&v, sizeof(v), what);
        return v;
    }

    std::string string(const char* what, std::uint32_t max_len = 1u << 20) {
        const std::uint32_t len = u32(what);
        if (len > max_len) throw format_error(name + ": implausible length for " + what);
        std::string s(len, '\0');
        bytes(s.data(), len, what);
        return s;
    }

    void expect_eof() {
        char probe;
        stream.read(&probe, 1);
        if (!stream.eof()) throw format_error(name + ": trailing bytes after the declared content");
    }

    std::ifstream stream;
    std::string name;
};

// Writes through a temp file and renames into place.
class AtomicFile {
  public:
    explicit AtomicFile(const std::string& path)
        : path_(path), tmp_(path + ".tmp"), out_(tmp_, std::ios::binary) {
        if (!out_) throw format_error("cannot open " + tmp_ + " for writing");
    }

    std::ostream& stream() { return out_; }

    void commit() {
        out_.flush();
        if (!out_) throw format_error("write failed for " + tmp_);
        out_.close();
        std::filesystem::rename(tmp_, path_);
        committed_ = true;
    }

    ~AtomicFile() {
        if (!committed_) {
            out_.close();
            std::error_code ec;
            std::filesystem::remove(tmp_, ec);
        }
    }

  private:
    std::string path_;
    std::string tmp_;
    std::ofstream out_;
    bool committed_ = false;
};

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// --- key=value parsing ----------------------------------------------------

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream lines(text);
    std::string line;
    int line_no = 0;
    auto trim = [](std::string s) {
        const auto begin = s.find_first_not_of(" \t\r");
        const auto end = s.find_last_not_of(" \t\r");
        if (begin == std::string::npos) return std::string();
        return s.substr(begin, end - begin + 1);
    };
    while (std::getline(lines, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw config_error("line " + std::to_string(line_no) + ": expected `key = value`");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw config_error("line " + std::to_string(line_no) + ": empty key or value");
        }
        if (out.count(key)) throw config_error("duplicate key `" + key + "`");
        out[key] = value;
    }
    return out;
}

class KeyValueBinder {
  public:
    explicit KeyValueBinder(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

    void bind(const std::string& key, int& target) {
        if (auto v = take(key)) target = parse_int(key, *v);
    }

    void bind(const std::string& key, double& target) {
        if (auto v = take(key)) target = parse_double(key, *v);
    }

    void bind(const std::string& key, std::uint64_t& target) {
        if (auto v = take(key)) {
            try {
                target = std::stoull(*v);
            } catch (const std::exception&) {
                throw config_error("key `" + key + "`: not an unsigned integer: " + *v);
            }
        }
    }

    void finish() const {
        if (!kv_.empty()) {
            throw config_error("unknown key `" + kv_.begin()->first + "`");
        }
    }

  private:
    std::optional<std::string> take(const std::string& key) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return std::nullopt;
        std::string v = it->second;
        kv_.erase(it);
        return v;
    }

    static int parse_int(const std::string& key, const std::string& v) {
        try {
            std::size_t used = 0;
            const int parsed = std::stoi(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return parsed;
        } catch (const std::exception&) {
            throw config_error("key `" + key + "`: not an integer: " + v);
        }
    }

    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t used = 0;
            const double parsed = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return parsed;
        } catch (const std::exception&) {
            throw config_error("key `" + key + "`: not a number: " + v);
        }
    }

    std::map<std::string, std::string> kv_;
};

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

// Tensor sections of a checkpoint, in the order they are written.
void for_each_checkpoint_tensor(Model& model,
                                const std::function<void(const std::string&, Tensor&)>& visit) {
    model.backbone.for_each_tensor(visit);
    visit("pool.prompts", model.pool.prompts);
    visit("pool.keys", model.pool.keys);
    visit("vision_head.alpha", model.vision_head.alpha);
    visit("vision_head.beta", model.vision_head.beta);
    visit("text_head.alpha", model.text_head.alpha);
    visit("text_head.beta", model.text_head.beta);
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& path) {
    dataset.validate();
    AtomicFile file(path);
    std::ostream& out = file.stream();
    write_bytes(out, k_dataset_magic, sizeof(k_dataset_magic));
    write_u32(out, static_cast<std::uint32_t>(dataset.image_size));
    write_u32(out, static_cast<std::uint32_t>(dataset.channels));
    for (int card : dataset.cardinalities) write_u32(out, static_cast<std::uint32_t>(card));
    write_u32(out, static_cast<std::uint32_t>(dataset.shots));
    write_u32(out, static_cast<std::uint32_t>(dataset.class_count()));
    for (int c = 0; c < dataset.class_count(); ++c) {
        write_string(out, dataset.class_names[static_cast<std::size_t>(c)]);
        for (int axis = 0; axis < 3; ++axis) {
            write_u32(out, static_cast<std::uint32_t>(
                               dataset.class_factors[static_cast<std::size_t>(c)][static_cast<std::size_t>(axis)]));
        }
        const std::uint8_t flag = dataset.base_flags[static_cast<std::size_t>(c)] ? 1 : 0;
        write_bytes(out, &flag, 1);
    }
    for (int i = 0; i < dataset.sample_count(); ++i) {
        write_u32(out, static_cast<std::uint32_t>(dataset.labels[static_cast<std::size_t>(i)]));
        const auto& pixels = dataset.images[static_cast<std::size_t>(i)];
        write_bytes(out, pixels.data(), pixels.size() * sizeof(float));
    }
    file.commit();
}

Dataset load_dataset(const std::string& path) {
    Reader in(path);
    char magic[sizeof(k_dataset_magic)];
    in.bytes(magic, sizeof(magic), "magic");
    if (std::memcmp(magic, k_dataset_magic, sizeof(magic)) != 0) {
        throw format_error(path + ": not a dataset file (magic mismatch)");
    }
    Dataset data;
    data.image_size = static_cast<int>(in.u32("image_size"));
    data.channels = static_cast<int>(in.u32("channels"));
    for (auto& card : data.cardinalities) card = static_cast<int>(in.u32("cardinality"));
    data.shots = static_cast<int>(in.u32("shots"));
    const std::uint32_t n_classes = in.u32("class count");
    if (n_classes == 0 || n_classes > (1u << 20)) {
        throw format_error(path + ": implausible class count");
    }
    for (std::uint32_t c = 0; c < n_classes; ++c) {
        data.class_names.push_back(in.string("class name"));
        std::array<int, 3> f;
        for (auto& axis : f) axis = static_cast<int>(in.u32("class factor"));
        data.class_factors.push_back(f);
        std::uint8_t flag;
        in.bytes(&flag, 1, "base flag");
        data.base_flags.push_back(flag ? 1 : 0);
    }
    if (data.image_size <= 0 || data.channels <= 0) {
        throw format_error(path + ": non-positive image dimensions");
    }
    const std::size_t pixel_count =
        static_cast<std::size_t>(data.channels) * data.image_size * data.image_size;
    // remaining bytes must be a whole number of records
    const auto record_size = static_cast<std::streamoff>(4 + pixel_count * sizeof(float));
    const std::streamoff here = in.stream.tellg();
    in.stream.seekg(0, std::ios::end);
    const std::streamoff total = in.stream.tellg();
    in.stream.seekg(here);
    const std::streamoff payload = total - here;
    if (payload < 0 || payload % record_size != 0) {
        throw format_error(path + ": sample records do not fill the file exactly");
    }
    const auto n_samples = static_cast<std::size_t>(payload / record_size);
    data.labels.reserve(n_samples);
    data.images.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const std::uint32_t label = in.u32("sample label");
        if (label >= n_classes) throw format_error(path + ": sample label out of range");
        data.labels.push_back(static_cast<int>(label));
        std::vector<float> pixels(pixel_count);
        in.bytes(pixels.data(), pixel_count * sizeof(float), "sample pixels");
        data.images.push_back(std::move(pixels));
    }
    in.expect_eof();
    data.validate();
    return data;
}

void save_checkpoint(const std::string& path, const Model& model, const SgdState& optimizer) {
    AtomicFile file(path);
    std::ostream& out = file.stream();
    write_bytes(out, k_checkpoint_magic, sizeof(k_checkpoint_magic));
    write_string(out, serialize_task_config(model.config));
    write_u64(out, model.config.seed);
    write_u64(out, static_cast<std::uint64_t>(optimizer.step_count));

    std::vector<std::pair<std::string, const Tensor*>> sections;
    auto& mutable_model = const_cast<Model&>(model);  // visitation only, nothing is modified
    for_each_checkpoint_tensor(mutable_model, [&sections](const std::string& name, Tensor& t) {
        sections.emplace_back(name, &t);
    });
    TrainableSet trainables = collect_trainables(model);
    if (optimizer.velocity.size() != trainables.params.size()) {
        throw contract_error("save_checkpoint: optimizer state does not match the trainables");
    }

    write_u32(out, static_cast<std::uint32_t>(sections.size() + trainables.params.size()));
    auto write_section = [&out](const std::string& name, const std::vector<int>& shape,
                                const std::vector<double>& values) {
        write_string(out, name);
        write_u32(out, static_cast<std::uint32_t>(shape.size()));
        for (int d : shape) write_u32(out, static_cast<std::uint32_t>(d));
        write_bytes(out, values.data(), values.size() * sizeof(double));
    };
    for (const auto& [name, tensor] : sections) {
        write_section(name, tensor->shape(), tensor->values());
    }
    for (std::size_t i = 0; i < trainables.params.size(); ++i) {
        write_section("opt." + trainables.params[i].first, trainables.params[i].second.shape(),
                      optimizer.velocity[i]);
    }
    file.commit();
}

CheckpointState load_checkpoint(const std::string& path) {
    Reader in(path);
    char magic[sizeof(k_checkpoint_magic)];
    in.bytes(magic, sizeof(magic), "magic");
    if (std::memcmp(magic, k_checkpoint_magic, sizeof(magic)) != 0) {
        throw format_error(path + ": not a checkpoint file (magic mismatch)");
    }
    const std::string config_text = in.string("config echo");
    TaskConfig config;
    try {
        config = parse_task_config_text(config_text);
    } catch (const config_error& e) {
        throw format_error(path + ": bad config echo: " + e.what());
    }
    const std::uint64_t seed = in.u64("seed");
    if (seed != config.seed) throw format_error(path + ": seed disagrees with the config echo");
    const std::uint64_t step_count = in.u64("step counter");

    CheckpointState state;
    state.model = build_model(config);
    TrainableSet trainables = collect_trainables(state.model);
    state.optimizer = init_sgd_state(trainables);
    state.optimizer.step_count = static_cast<std::int64_t>(step_count);

    std::vector<std::pair<std::string, Tensor*>> expected;
    for_each_checkpoint_tensor(state.model, [&expected](const std::string& name, Tensor& t) {
        expected.emplace_back(name, &t);
    });
    std::vector<std::pair<std::string, std::vector<double>*>> velocity_sections;
    for (std::size_t i = 0; i < trainables.params.size(); ++i) {
        velocity_sections.emplace_back("opt." + trainables.params[i].first,
                                       &state.optimizer.velocity[i]);
    }

    const std::uint32_t n_sections = in.u32("section count");
    if (n_sections != expected.size() + velocity_sections.size()) {
        throw format_error(path + ": expected " +
                           std::to_string(expected.size() + velocity_sections.size()) +
                           " tensor sections, file declares " + std::to_string(n_sections));
    }
    auto read_section = [&in, &path](const std::string& want_name,
                                     const std::vector<int>& want_shape, double* dest) {
        const std::string name = in.string("section name");
        if (name != want_name) {
            throw format_error(path + ": section `" + name + "` where `" + want_name +
                               "` was expected");
        }
        const std::uint32_t rank = in.u32("section rank");
        if (rank != want_shape.size()) {
            throw format_error(path + ": section `" + name + "` rank mismatch");
        }
        std::size_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::uint32_t dim = in.u32("section dim");
            if (static_cast<int>(dim) != want_shape[i]) {
                throw format_error(path + ": section `" + name + "` shape disagrees with config");
            }
            count *= dim;
        }
        in.bytes(dest, count * sizeof(double), name.c_str());
    };
    for (auto& [name, tensor] : expected) {
        read_section(name, tensor->shape(), tensor->values().data());
    }
    for (std::size_t i = 0; i < velocity_sections.size(); ++i) {
        read_section(velocity_sections[i].first, trainables.params[i].second.shape(),
                     velocity_sections[i].second->data());
    }
    in.expect_eof();
    return state;
}

TaskConfig parse_task_config_text(const std::string& text) {
    KeyValueBinder binder(parse_key_values(text));
    TaskConfig c;
    binder.bind("image_size", c.model.image_size);
    binder.bind("patch_size", c.model.patch_size);
    binder.bind("channels", c.model.channels);
    binder.bind("d_vis", c.model.d_vis);
    binder.bind("d_txt", c.model.d_txt);
    binder.bind("d_embed", c.model.d_embed);
    binder.bind("n_vis_layers", c.model.n_vis_layers);
    binder.bind("n_txt_layers", c.model.n_txt_layers);
    binder.bind("n_heads", c.model.n_heads);
    binder.bind("vocab_size", c.model.vocab_size);
    binder.bind("max_text_len", c.model.max_text_len);
    binder.bind("temperature", c.model.temperature);
    binder.bind("pool_size", c.pool_size);
    binder.bind("prompt_len", c.prompt_len);
    binder.bind("clusters", c.clusters);
    binder.bind("kmeans_iters", c.kmeans_iters);
    binder.bind("lambda1", c.weights.lambda1);
    binder.bind("lambda2", c.weights.lambda2);
    binder.bind("lambda3", c.weights.lambda3);
    binder.bind("lambda4", c.weights.lambda4);
    binder.bind("epochs", c.schedule.epochs);
    binder.bind("steps_per_epoch", c.schedule.steps_per_epoch);
    binder.bind("batch_size", c.schedule.batch_size);
    binder.bind("lr", c.schedule.base_lr);
    binder.bind("momentum", c.schedule.momentum);
    binder.bind("seed", c.seed);
    binder.finish();
    c.model.seed = c.seed;
    c.schedule.seed = c.seed;
    return c;
}

TaskConfig load_task_config(const std::string& path) {
    return parse_task_config_text(read_text_file(path));
}

std::string serialize_task_config(const TaskConfig& c) {
    std::ostringstream out;
    out << "image_size = " << c.model.image_size << "\n";
    out << "patch_size = " << c.model.patch_size << "\n";
    out << "channels = " << c.model.channels << "\n";
    out << "d_vis = " << c.model.d_vis << "\n";
    out << "d_txt = " << c.model.d_txt << "\n";
    out << "d_embed = " << c.model.d_embed << "\n";
    out << "n_vis_layers = " << c.model.n_vis_layers << "\n";
    out << "n_txt_layers = " << c.model.n_txt_layers << "\n";
    out << "n_heads = " << c.model.n_heads << "\n";
    out << "vocab_size = " << c.model.vocab_size << "\n";
    out << "max_text_len = " << c.model.max_text_len << "\n";
    out << "temperature = " << format_double(c.model.temperature) << "\n";
    out << "pool_size = " << c.pool_size << "\n";
    out << "prompt_len = " << c.prompt_len << "\n";
    out << "clusters = " << c.clusters << "\n";
    out << "kmeans_iters = " << c.kmeans_iters << "\n";
    out << "lambda1 = " << format_double(c.weights.lambda1) << "\n";
    out << "lambda2 = " << format_double(c.weights.lambda2) << "\n";
    out << "lambda3 = " << format_double(c.weights.lambda3) << "\n";
    out << "lambda4 = " << format_double(c.weights.lambda4) << "\n";
    out << "epochs = " << c.schedule.epochs << "\n";
    out << "steps_per_epoch = " << c.schedule.steps_per_epoch << "\n";
    out << "batch_size = " << c.schedule.batch_size << "\n";
    out << "lr = " << format_double(c.schedule.base_lr) << "\n";
    out << "momentum = " << format_double(c.schedule.momentum) << "\n";
    out << "seed = " << c.seed << "\n";
    return out.str();
}

SyntheticSpec parse_synthetic_spec_text(const std::string& text) {
    KeyValueBinder binder(parse_key_values(text));
    SyntheticSpec s;
    binder.bind("n_colors", s.n_colors);
    binder.bind("n_shapes", s.n_shapes);
    binder.bind("n_textures", s.n_textures);
    binder.bind("image_size", s.image_size);
    binder.bind("noise_std", s.noise_std);
    binder.bind("samples_per_class", s.samples_per_class);
    binder.bind("n_novel", s.n_novel);
    binder.bind("shots", s.shots);
    binder.bind("seed", s.seed);
    binder.finish();
    s.validate();
    return s;
}

SyntheticSpec load_synthetic_spec(const std::string& path) {
    return parse_synthetic_spec_text(read_text_file(path));
}

void bind_task_to_dataset(TaskConfig& config, const Dataset& dataset) {
    if (config.model.image_size != dataset.image_size) {
        throw config_error("config image_size " + std::to_string(config.model.image_size) +
                           " does not match dataset image_size " +
                           std::to_string(dataset.image_size));
    }
    config.model.channels = dataset.channels;
    config.model.vocab_size = dataset.vocabulary().size();
    config.model.max_text_len = Vocabulary::sequence_length;
}

}  // namespace attriprompt
