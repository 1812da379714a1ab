#include "rwkviml/config.hpp"

#include <fstream>
#include <sstream>

#include "rwkviml/error.hpp"

namespace iml {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, ',')) out.push_back(trim(cur));
    return out;
}

std::int64_t to_int(const std::string& key, const std::string& s) {
    try {
        size_t used = 0;
        const std::int64_t v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' needs an integer, got '" + s + "'");
    }
}

double to_double(const std::string& key, const std::string& s) {
    try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' needs a number, got '" + s + "'");
    }
}

template <typename T>
std::string join(const std::vector<T>& v) {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

}  // namespace

KvMap parse_config_text(const std::string& text) {
    KvMap map;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              " is not key=value: " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
        map[key] = val;
    }
    return map;
}

KvMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void apply_override(KvMap& map, const std::string& keyval) {
    const auto eq = keyval.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + keyval + "' is not key=value");
    map[trim(keyval.substr(0, eq))] = trim(keyval.substr(eq + 1));
}

std::string ConfigView::raw(const std::string& key, const std::string& fallback) {
    taken_.insert(key);
    const auto it = map_.find(key);
    const std::string v = it == map_.end() ? fallback : it->second;
    resolved_[key] = v;
    return v;
}

std::string ConfigView::take_str(const std::string& key, const std::string& def) {
    return raw(key, def);
}

std::int64_t ConfigView::take_int(const std::string& key, std::int64_t def) {
    return to_int(key, raw(key, std::to_string(def)));
}

double ConfigView::take_double(const std::string& key, double def) {
    std::ostringstream os;
    os << def;
    return to_double(key, raw(key, os.str()));
}

std::vector<int> ConfigView::take_int_list(const std::string& key, std::vector<int> def) {
    const std::string v = raw(key, join(def));
    std::vector<int> out;
    for (const auto& part : split_commas(v))
        out.push_back(static_cast<int>(to_int(key, part)));
    return out;
}

std::vector<double> ConfigView::take_double_list(const std::string& key,
                                                 std::vector<double> def) {
    const std::string v = raw(key, join(def));
    std::vector<double> out;
    for (const auto& part : split_commas(v)) out.push_back(to_double(key, part));
    return out;
}

void ConfigView::finish() const {
    std::string unknown;
    for (const auto& [key, value] : map_)
        if (!taken_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    if (!unknown.empty()) throw ConfigError("unknown config key(s): " + unknown);
}

std::string ConfigView::resolved() const {
    std::ostringstream os;
    for (const auto& [key, value] : resolved_) os << key << "=" << value << "\n";
    return os.str();
}

void TrainConfig::validate() const {
    if (lr_init <= 0) throw ConfigError("lr_init must be > 0");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (warmup_steps < 0 || warmup_steps > steps)
        throw ConfigError("warmup_steps must lie in [0, steps]");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (precision != "f32")
        throw ConfigError("precision '" + precision + "' not supported; use f32");
    if (eval_split != "train" && eval_split != "test")
        throw ConfigError("eval_split must be train or test, got " + eval_split);
    if (clip_norm <= 0) throw ConfigError("clip_norm must be > 0");
    if (edge_radius < 1) throw ConfigError("edge_radius must be >= 1");
    weights.validate();
}

RunSettings RunSettings::from_view(ConfigView& v) {
    RunSettings s;
    auto& bb = s.model.backbone;

    auto fill3 = [](const char* key, const std::vector<int>& in, std::array<int, 3>& out) {
        if (in.size() != 3)
            throw ConfigError(std::string("key '") + key + "' needs 3 comma-separated values");
        std::copy(in.begin(), in.end(), out.begin());
    };
    auto fill3d = [](const char* key, const std::vector<double>& in, std::array<double, 3>& out) {
        if (in.size() != 3)
            throw ConfigError(std::string("key '") + key + "' needs 3 comma-separated values");
        std::copy(in.begin(), in.end(), out.begin());
    };

    fill3("channels", v.take_int_list("channels", {bb.channels.begin(), bb.channels.end()}),
          bb.channels);
    fill3("depths", v.take_int_list("depths", {bb.depths.begin(), bb.depths.end()}), bb.depths);
    fill3("local_k", v.take_int_list("local_k", {bb.local_k.begin(), bb.local_k.end()}),
          bb.local_k);
    fill3("stem", v.take_int_list("stem", {bb.stem.begin(), bb.stem.end()}), bb.stem);
    fill3d("ratio_local",
           v.take_double_list("ratio_local", {bb.ratio_con.begin(), bb.ratio_con.end()}),
           bb.ratio_con);
    fill3d("ratio_identity",
           v.take_double_list("ratio_identity", {bb.ratio_i.begin(), bb.ratio_i.end()}),
           bb.ratio_i);
    for (int i = 0; i < 3; ++i)
        bb.ratio_v[static_cast<size_t>(i)] = 1.0 - bb.ratio_con[static_cast<size_t>(i)] -
                                             bb.ratio_i[static_cast<size_t>(i)];
    bb.dw_k = static_cast<int>(v.take_int("dw_k", bb.dw_k));
    bb.ffn_ratio = static_cast<int>(v.take_int("ffn_ratio", bb.ffn_ratio));
    bb.merge_ffn_ratio = static_cast<int>(v.take_int("merge_ffn_ratio", bb.merge_ffn_ratio));
    s.model.head_width = static_cast<int>(v.take_int("head_width", s.model.head_width));

    auto& t = s.train;
    t.lr_init = v.take_double("lr_init", t.lr_init);
    t.weight_decay = v.take_double("weight_decay", t.weight_decay);
    t.batch_size = static_cast<int>(v.take_int("batch_size", t.batch_size));
    t.steps = static_cast<int>(v.take_int("steps", t.steps));
    t.warmup_steps = static_cast<int>(v.take_int("warmup_steps", t.warmup_steps));
    t.seed = static_cast<std::uint64_t>(v.take_int("seed", static_cast<std::int64_t>(t.seed)));
    t.precision = v.take_str("precision", t.precision);
    t.eval_every = static_cast<int>(v.take_int("eval_every", t.eval_every));
    t.eval_split = v.take_str("eval_split", t.eval_split);
    t.clip_norm = v.take_double("clip_norm", t.clip_norm);
    t.edge_radius = static_cast<int>(v.take_int("edge_radius", t.edge_radius));
    t.weights.lambda1 = static_cast<float>(v.take_double("lambda1", t.weights.lambda1));
    t.weights.lambda2 = static_cast<float>(v.take_double("lambda2", t.weights.lambda2));
    t.weights.lambda3 = static_cast<float>(v.take_double("lambda3", t.weights.lambda3));
    t.weights.lambda_final =
        static_cast<float>(v.take_double("lambda_final", t.weights.lambda_final));
    t.weights.lambda_edge =
        static_cast<float>(v.take_double("lambda_edge", t.weights.lambda_edge));

    s.data_root = v.take_str("data_root", s.data_root);
    s.out_dir = v.take_str("out_dir", s.out_dir);
    s.resume = v.take_str("resume", s.resume);

    s.model.validate();
    t.validate();
    return s;
}

}  // namespace iml
