#include "tff/networks.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tff/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tff {

void NetConfig::validate() const {
  check_arg(!encoder_widths.empty(), "net: encoder needs at least one stage");
  check_arg(image_height % downsample() == 0 && image_width % downsample() == 0,
            "net: image size not divisible by the encoder downsampling");
  check_arg(grid_height() >= 4 && grid_width() >= 4,
            "net: encoder output must be at least 4x4");
  for (int k : psp_kernels)
    check_arg(k >= 1 && grid_height() % k == 0 && grid_width() % k == 0,
              "net: pyramid kernel must divide the feature grid");
  check_arg(encoder_channels > 0 && class_count >= 2, "net: bad widths");
  check_arg(dropout_p >= 0 && dropout_p < 1, "net: bad dropout");
}

namespace {

Tensor normal_init(Rng& rng, Shape shape, double stddev) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from_data(std::move(shape), std::move(v));
}

void add_conv(ParameterStore& ps, Rng& rng, const std::string& name, int cout,
              int cin, int k, bool bn, double stddev = -1) {
  const double s = stddev > 0 ? stddev : std::sqrt(2.0 / (cin * k * k));
  ps.add(name + "/W", normal_init(rng, {cout, cin, k, k}, s));
  ps.add(name + "/b", Tensor::zeros({cout}));
  if (bn) {
    ps.add(name + "/bn_g", Tensor::full({cout}, 1.0));
    ps.add(name + "/bn_b", Tensor::zeros({cout}));
    ps.bn(name, cout);
  }
}

void add_linear(ParameterStore& ps, Rng& rng, const std::string& name, int out,
                int in, double stddev = -1) {
  const double s = stddev > 0 ? stddev : std::sqrt(2.0 / in);
  ps.add(name + "/W", normal_init(rng, {out, in}, s));
  ps.add(name + "/b", Tensor::zeros({out}));
}

void add_bn1d(ParameterStore& ps, const std::string& name, int n) {
  ps.add(name + "/bn_g", Tensor::full({n}, 1.0));
  ps.add(name + "/bn_b", Tensor::zeros({n}));
  ps.bn(name, 1);
}

// stride-2 while the grid is larger than 2, then stride 1
std::vector<int> motion_strides(const NetConfig& cfg) {
  std::vector<int> strides;
  int h = std::min(cfg.grid_height(), cfg.grid_width());
  for (size_t i = 0; i < cfg.motion_conv_widths.size(); ++i) {
    const int s = h > 2 ? 2 : 1;
    strides.push_back(s);
    h = (h - 1) / s + 1;
  }
  return strides;
}

int motion_flat_dim(const NetConfig& cfg) {
  int h = cfg.grid_height(), w = cfg.grid_width();
  for (int s : motion_strides(cfg)) {
    h = (h - 1) / s + 1;
    w = (w - 1) / s + 1;
  }
  return cfg.motion_conv_widths.back() * h * w;
}

Tensor conv_bn_relu(const Tensor& x, ParameterStore& ps, const std::string& name,
                    int stride, int pad, const NetConfig& cfg, const Fwd& f) {
  Tensor y = conv2d(x, ps.p(name + "/W"), ps.p(name + "/b"), stride, pad);
  const bool current_stats = f.train || !f.bn_eval_running;
  const double momentum = f.train ? cfg.bn_momentum : 0.0;
  y = batchnorm2d(y, ps.p(name + "/bn_g"), ps.p(name + "/bn_b"),
                  ps.bn(name, y.dim(0)), current_stats, cfg.bn_eps, momentum);
  return relu(y);
}

Tensor maybe_dropout(const Tensor& x, const NetConfig& cfg, const Fwd& f) {
  if (!f.train || cfg.dropout_p <= 0) return x;
  check_arg(f.rng != nullptr, "training forward needs an rng for dropout");
  return dropout(x, cfg.dropout_p, *f.rng, true);
}

}  // namespace

void init_model_params(ParameterStore& ps, const NetConfig& cfg, Rng& rng) {
  cfg.validate();
  const int C = cfg.encoder_channels;

  int cin = 3;
  for (size_t i = 0; i < cfg.encoder_widths.size(); ++i) {
    add_conv(ps, rng, "enc/stem" + std::to_string(i), cfg.encoder_widths[i], cin, 3, true);
    cin = cfg.encoder_widths[i];
  }
  add_conv(ps, rng, "enc/refine", C, cin, 3, true);
  for (size_t i = 0; i < cfg.psp_kernels.size(); ++i)
    add_conv(ps, rng, "enc/psp" + std::to_string(i), cfg.psp_features, C, 1, false);
  add_conv(ps, rng, "enc/fuse", C,
           C + cfg.psp_features * (int)cfg.psp_kernels.size(), 3, true);

  add_conv(ps, rng, "sem/conv", cfg.sem_width, C, 3, true);
  add_conv(ps, rng, "sem/head", cfg.class_count, cfg.sem_width, 3, false);

  add_conv(ps, rng, "dep/conv0", cfg.depth_width, C, 3, true);
  add_conv(ps, rng, "dep/conv1", cfg.depth_width, cfg.depth_width, 1, true);
  add_conv(ps, rng, "dep/conv2", 1, cfg.depth_width, 1, true);

  // half of the first motion conv starts as a temporal-difference
  // operator (same kernel, opposite signs on the two stacked
  // representations); the other half stays appearance-aware
  {
    const int cout = cfg.motion_conv_widths[0];
    Tensor w = normal_init(rng, {cout, 2 * C, 3, 3}, std::sqrt(2.0 / (C * 9)));
    auto& wv = w.mutable_data();
    for (int oc = 0; oc < cout / 2; ++oc)
      for (int ic = 0; ic < C; ++ic)
        for (int k = 0; k < 9; ++k)
          wv[((size_t)oc * 2 * C + C + ic) * 9 + k] =
              -wv[((size_t)oc * 2 * C + ic) * 9 + k];
    ps.add("mot/conv0/W", std::move(w));
    ps.add("mot/conv0/b", Tensor::zeros({cout}));
    ps.add("mot/conv0/bn_g", Tensor::full({cout}, 1.0));
    ps.add("mot/conv0/bn_b", Tensor::zeros({cout}));
    ps.bn("mot/conv0", cout);
  }
  cin = cfg.motion_conv_widths[0];
  for (size_t i = 1; i < cfg.motion_conv_widths.size(); ++i) {
    add_conv(ps, rng, "mot/conv" + std::to_string(i), cfg.motion_conv_widths[i], cin, 3, true);
    cin = cfg.motion_conv_widths[i];
  }
  add_linear(ps, rng, "mot/fc", cfg.motion_feature_width, motion_flat_dim(cfg));
  add_bn1d(ps, "mot/fc", cfg.motion_feature_width);

  add_linear(ps, rng, "fus", cfg.motion_feature_width, cfg.motion_feature_width + 3);

  const int M = cfg.motion_feature_width, S = cfg.motion_state_width;
  const double gs = std::sqrt(1.0 / M), hs = std::sqrt(1.0 / S);
  for (const char* g : {"o", "u", "c"}) {
    ps.add(std::string("gru/Wm") + g, normal_init(rng, {S, M}, gs));
    ps.add(std::string("gru/Wh") + g, normal_init(rng, {S, S}, hs));
    // a lazy update gate starts the unit off as a running average
    ps.add(std::string("gru/b") + g,
           Tensor::full({S}, std::string(g) == "u" ? -1.0 : 0.0));
  }
  add_linear(ps, rng, "head/fc0", cfg.head_hidden, S);
  add_bn1d(ps, "head/fc0", cfg.head_hidden);
  add_linear(ps, rng, "head/fc1", 6, cfg.head_hidden, 0.01);

  const double xs = std::sqrt(1.0 / (C * 9));
  ps.add("gate/Whid", normal_init(rng, {1, C, 3, 3}, xs));
  ps.add("gate/Win", normal_init(rng, {1, C, 3, 3}, xs));
  ps.add("gate/b", Tensor::full({1}, 1.0));

  for (const char* s : {"s_seg", "s_depl1", "s_depsig", "s_trans", "s_rot"})
    ps.add(std::string("loss/") + s, Tensor::zeros({1}));
}

Tensor encode(const Tensor& x, ParameterStore& ps, const NetConfig& cfg, const Fwd& f) {
  check_arg(x.shape() == Shape({3, cfg.image_height, cfg.image_width}),
            "encode: frame shape mismatch, got " + shape_str(x.shape()));
  Tensor cur = x;
  for (size_t i = 0; i < cfg.encoder_widths.size(); ++i)
    cur = conv_bn_relu(cur, ps, "enc/stem" + std::to_string(i), 2, 1, cfg, f);
  cur = conv_bn_relu(cur, ps, "enc/refine", 1, 1, cfg, f);

  std::vector<Tensor> parts{cur};
  for (size_t i = 0; i < cfg.psp_kernels.size(); ++i) {
    const int k = cfg.psp_kernels[i];
    const std::string name = "enc/psp" + std::to_string(i);
    Tensor level = avgpool2d(cur, k);
    level = relu(conv2d(level, ps.p(name + "/W"), ps.p(name + "/b"), 1, 0));
    parts.push_back(upsample_nearest2d(level, k));
  }
  return conv_bn_relu(concat(parts, 0), ps, "enc/fuse", 1, 1, cfg, f);
}

Tensor decode_semantic(const Tensor& r, ParameterStore& ps, const NetConfig& cfg,
                       const Fwd& f) {
  check_arg(r.dim(1) == cfg.grid_height() && r.dim(2) == cfg.grid_width(),
            "decode_semantic: feature grid mismatch");
  Tensor y = conv_bn_relu(r, ps, "sem/conv", 1, 1, cfg, f);
  y = maybe_dropout(y, cfg, f);
  y = upsample_nearest2d(y, cfg.downsample());
  return conv2d(y, ps.p("sem/head/W"), ps.p("sem/head/b"), 1, 1);
}

Tensor decode_depth(const Tensor& r, ParameterStore& ps, const NetConfig& cfg,
                    const Fwd& f) {
  Tensor y = conv_bn_relu(r, ps, "dep/conv0", 1, 1, cfg, f);
  y = maybe_dropout(y, cfg, f);
  y = conv_bn_relu(y, ps, "dep/conv1", 1, 0, cfg, f);
  y = maybe_dropout(y, cfg, f);
  return conv_bn_relu(y, ps, "dep/conv2", 1, 0, cfg, f);
}

Tensor decode_motion(const Tensor& pair, ParameterStore& ps, const NetConfig& cfg,
                     const Fwd& f) {
  check_arg(pair.dim(0) == 2 * cfg.encoder_channels,
            "decode_motion: input must stack two representations");
  Tensor cur = pair;
  const auto strides = motion_strides(cfg);
  for (size_t i = 0; i < cfg.motion_conv_widths.size(); ++i) {
    cur = conv_bn_relu(cur, ps, "mot/conv" + std::to_string(i), strides[i], 1, cfg, f);
    cur = maybe_dropout(cur, cfg, f);
  }
  Tensor flat = reshape(cur, {(int)cur.numel()});
  Tensor m = add(matmul(ps.p("mot/fc/W"), flat), ps.p("mot/fc/b"));
  const bool current_stats = f.train || !f.bn_eval_running;
  m = batchnorm1d(m, ps.p("mot/fc/bn_g"), ps.p("mot/fc/bn_b"), ps.bn("mot/fc", 1),
                  current_stats, cfg.bn_eps, f.train ? cfg.bn_momentum : 0.0);
  return relu(m);
}

Tensor fuse_acceleration(const Tensor& motion_features,
                         const std::optional<std::array<double, 3>>& accel,
                         ParameterStore& ps, const NetConfig& cfg, const Fwd&) {
  if (!accel.has_value()) return motion_features;
  check_arg(motion_features.shape() == Shape{cfg.motion_feature_width},
            "fuse_acceleration: feature width mismatch");
  Tensor a = Tensor::from_data({3}, {(*accel)[0], (*accel)[1], (*accel)[2]});
  Tensor joined = concat({motion_features, a}, 0);
  return add(matmul(ps.p("fus/W"), joined), ps.p("fus/b"));
}

void save_checkpoint(const std::string& dir, const ParameterStore& ps,
                     const NetConfig& cfg) {
  fs::create_directories(dir);
  json m;
  m["format"] = 1;
  m["net_config"] = json::parse(net_config_to_json(cfg));
  json params = json::array();
  for (const auto& name : ps.order) {
    std::string file = name;
    for (auto& ch : file)
      if (ch == '/') ch = '.';
    file += ".tnsr";
    write_tensor(dir + "/" + file, ps.params.at(name));
    params.push_back({{"name", name}, {"file", file}});
  }
  m["params"] = params;
  json stats = json::array();
  for (const auto& [name, bn] : ps.stats) {
    std::string file = name;
    for (auto& ch : file)
      if (ch == '/') ch = '.';
    file += ".bnstats.tnsr";
    const int c = (int)bn.mean.size();
    std::vector<double> packed(bn.mean);
    packed.insert(packed.end(), bn.var.begin(), bn.var.end());
    write_tensor(dir + "/" + file, Tensor::from_data({2, c}, std::move(packed)));
    stats.push_back({{"name", name}, {"file", file}});
  }
  m["stats"] = stats;
  std::ofstream os(dir + "/manifest.json");
  if (!os) throw std::runtime_error("cannot write checkpoint manifest in " + dir);
  os << m.dump(2) << "\n";
}

NetConfig load_checkpoint(const std::string& dir, ParameterStore& ps) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw std::runtime_error("cannot read checkpoint manifest in " + dir);
  json m = json::parse(is);
  const NetConfig cfg = net_config_from_json(m.at("net_config").dump());
  for (const auto& e : m.at("params")) {
    const std::string name = e.at("name").get<std::string>();
    Tensor t = read_tensor(dir + "/" + e.at("file").get<std::string>());
    ps.add(name, std::move(t));
  }
  for (const auto& e : m.at("stats")) {
    const std::string name = e.at("name").get<std::string>();
    Tensor packed = read_tensor(dir + "/" + e.at("file").get<std::string>());
    const int c = packed.dim(1);
    BnStats bn;
    bn.mean.assign(packed.data().begin(), packed.data().begin() + c);
    bn.var.assign(packed.data().begin() + c, packed.data().end());
    ps.stats[name] = std::move(bn);
  }
  return cfg;
}

std::string net_config_to_json(const NetConfig& c) {
  json j;
  j["image_height"] = c.image_height;
  j["image_width"] = c.image_width;
  j["encoder_widths"] = c.encoder_widths;
  j["encoder_channels"] = c.encoder_channels;
  j["psp_kernels"] = c.psp_kernels;
  j["psp_features"] = c.psp_features;
  j["sem_width"] = c.sem_width;
  j["depth_width"] = c.depth_width;
  j["motion_conv_widths"] = c.motion_conv_widths;
  j["motion_feature_width"] = c.motion_feature_width;
  j["motion_state_width"] = c.motion_state_width;
  j["head_hidden"] = c.head_hidden;
  j["class_count"] = c.class_count;
  j["dropout_p"] = c.dropout_p;
  j["bn_eps"] = c.bn_eps;
  j["bn_momentum"] = c.bn_momentum;
  j["eval_use_running_stats"] = c.eval_use_running_stats;
  return j.dump(2);
}

NetConfig net_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  NetConfig c;
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
  };
  get("image_height", c.image_height);
  get("image_width", c.image_width);
  get("encoder_widths", c.encoder_widths);
  get("encoder_channels", c.encoder_channels);
  get("psp_kernels", c.psp_kernels);
  get("psp_features", c.psp_features);
  get("sem_width", c.sem_width);
  get("depth_width", c.depth_width);
  get("motion_conv_widths", c.motion_conv_widths);
  get("motion_feature_width", c.motion_feature_width);
  get("motion_state_width", c.motion_state_width);
  get("head_hidden", c.head_hidden);
  get("class_count", c.class_count);
  get("dropout_p", c.dropout_p);
  get("bn_eps", c.bn_eps);
  get("bn_momentum", c.bn_momentum);
  get("eval_use_running_stats", c.eval_use_running_stats);
  return c;
}

}  // namespace tff
