#include "signloop/signloop.hpp"
#include "signloop/service/all.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

using namespace signloop;
using namespace signloop::service;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << text;
}

ServiceConfig config_from(const std::string& path) {
  ServiceConfig c = path.empty() ? ServiceConfig{} : load_config(path);
  apply_environment(c);
  c.check();
  spdlog::set_level(spdlog::level::from_str(c.log_level));
  return c;
}

std::unique_ptr<Session> offline_session(const ServiceConfig& cfg, const Json& overrides) {
  SessionConfig sc = cfg.session;
  merge(sc, overrides);
  if (sc.seed == 0) sc.seed = hash_seed(cfg.seed, 1);
  return std::make_unique<Session>("offline", sc, build_models(cfg), cfg.budget_ms);
}

/// Feeds a WAV file through a fresh session in one-second chunks.
std::unique_ptr<Session> generate(const ServiceConfig& cfg, const std::filesystem::path& audio, const Json& overrides) {
  const AudioClip clip = read_wav(audio);
  if (clip.sample_rate != cfg.audio.sample_rate) {
    throw ConfigError("audio is " + std::to_string(clip.sample_rate) + " Hz; the configured rate is " + std::to_string(cfg.audio.sample_rate));
  }
  auto s = offline_session(cfg, overrides);
  const std::span pcm(clip.samples);
  const auto chunk = static_cast<std::size_t>(cfg.audio.sample_rate);
  for (std::size_t i = 0; i < pcm.size(); i += chunk) s->push_audio(pcm.subspan(i, std::min(chunk, pcm.size() - i)));
  s->end_audio();
  return s;
}

void write_frames(const std::filesystem::path& p, const std::vector<Json>& msgs) {
  std::ofstream out(p);
  if (!out) throw ConfigError("cannot write " + p.string());
  for (const auto& m : msgs) {
    if (m["type"] == "frame") out << m.dump() << '\n';
  }
}

int cmd_serve(const std::string& config, const std::string& host, int port, bool dump) {
  ServiceConfig cfg = config_from(config);
  if (!host.empty()) cfg.host = host;
  if (port >= 0) cfg.port = port;
  if (dump) {
    std::cout << to_json(cfg).dump(2) << '\n';
    return 0;
  }
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Service svc(cfg);
  if (cfg.hitl.enabled) svc.start_background();
  HttpServer server(svc);
  const int bound = server.bind(cfg.host, cfg.port);
  spdlog::info("listening on {}:{}", cfg.host, bound);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("signal {}, shutting down", sig);
    server.stop();
  });
  server.run();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  svc.stop_background();
  return 0;
}

int cmd_gen(const std::string& config, const std::string& audio, const std::string& out_dir, std::uint64_t seed) {
  const ServiceConfig cfg = config_from(config);
  Json overrides = Json::object();
  if (seed != 0) overrides["seed"] = seed;
  auto s = generate(cfg, audio, overrides);
  auto sub = s->subscribe(0);
  s->close();
  const std::filesystem::path out(out_dir);
  std::filesystem::create_directories(out);
  write_text(out / "segments.json", s->document().dump(2) + "\n");
  write_frames(out / "frames.jsonl", sub->drain());
  write_text(out / "metrics.json", s->metrics().dump(2) + "\n");
  const Json run{{"audio", std::filesystem::absolute(audio).string()}, {"seed", s->seed()}, {"config", to_json(cfg)}};
  write_text(out / "run.json", run.dump(2) + "\n");
  std::cout << s->frames() << " frames, " << s->segments().size() << " segments -> " << out.string() << '\n';
  return 0;
}

int cmd_edit(const std::string& segments, const std::string& patch, const std::string& out_dir) {
  const std::filesystem::path seg_path(segments);
  const Json run = Json::parse(slurp(seg_path.parent_path() / "run.json"));
  ServiceConfig cfg = config_from_json(run.at("config"));
  apply_environment(cfg);
  auto s = generate(cfg, run.at("audio").get<std::string>(), {{"seed", run.at("seed")}});
  if (ir::parse_document(Json::parse(slurp(seg_path))).segments != s->segments()) {
    throw ConfigError(segments + " does not match the run it was generated by");
  }
  auto sub = s->subscribe(s->frames());
  const Json result = s->submit_edit(Json::parse(slurp(patch)));
  const std::filesystem::path out(out_dir);
  std::filesystem::create_directories(out);
  write_text(out / "segments.json", s->document().dump(2) + "\n");
  write_text(out / "edit.json", result.dump(2) + "\n");
  write_frames(out / "window.jsonl", sub->drain());
  const auto& r = result["report"];
  std::cout << "resampled frames " << r["first_index"] << ".." << r["last_index"] << " -> " << out.string() << '\n';
  return 0;
}

int cmd_validate(const std::string& path, double fps) {
  const Json doc = Json::parse(slurp(path));
  std::vector<ir::ValidationWarning> warnings;
  std::size_t n = 1;
  if (doc.is_object() && doc.contains("segments")) {
    n = ir::parse_document(doc, &warnings).segments.size();
  } else {
    ir::validate(doc, &warnings, fps);
  }
  for (const auto& w : warnings) std::cerr << "warning " << w.path << ": " << w.message << '\n';
  std::cout << "ok: " << n << (n == 1 ? " segment" : " segments") << '\n';
  return 0;
}

int cmd_bench(const std::string& config, std::vector<long> lengths, std::vector<long> deltas, int trials) {
  const ServiceConfig cfg = config_from(config);
  const Models m = build_models(cfg);
  const auto rows = cost_probe(lengths, deltas, trials, *m.decoder, *m.vae, *m.vocab, cfg.session.window.k, cfg.seed);
  std::cout << "T\tdelta\tmean_us\n";
  for (const auto& r : rows) std::cout << r.T << '\t' << r.delta << '\t' << r.mean_us << '\n';
  if (deltas.size() > 1) {
    for (long T : lengths) {
      std::vector<double> x, y;
      for (const auto& r : rows) {
        if (r.T != T) continue;
        x.push_back(std::log(static_cast<double>(r.delta)));
        y.push_back(std::log(r.mean_us));
      }
      const LinearFit f = least_squares(x, y);
      std::cout << "T=" << T << " log-log slope " << f.slope << " (r2 " << f.r2 << ")\n";
    }
  }
  return 0;
}

int cmd_fixtures(const std::string& config, const std::string& out_dir, int count, int words, std::uint64_t seed) {
  const ServiceConfig cfg = config_from(config);
  const auto vocab = ir::GlossVocab::toy(cfg.decoder.vocab);
  const std::filesystem::path out(out_dir);
  std::filesystem::create_directories(out);
  Json index = Json::array();
  for (int i = 0; i < count; ++i) {
    AudioClip c = synthetic_utterance(vocab, words, hash_seed(seed, static_cast<std::uint64_t>(i)), cfg.audio.sample_rate);
    char name[32];
    std::snprintf(name, sizeof name, "utt_%04d", i);
    c.name = name;
    write_wav(out / (c.name + ".wav"), c.samples, c.sample_rate);
    write_text(out / (c.name + ".json"), labels_json(c).dump(2) + "\n");
    index.push_back(c.name);
  }
  write_text(out / "index.json", index.dump(2) + "\n");
  std::cout << count << " clips -> " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"signloop: streaming speech-to-sign generation with windowed edits"};
  app.require_subcommand(1);
  std::string config;
  app.add_option("-c,--config", config, "service config file (JSON)")->check(CLI::ExistingFile);

  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  std::string host;
  int port = -1;
  bool dump = false;
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "TCP port; 0 picks a free one")->check(CLI::Range(0, 65535));
  serve->add_flag("--dump-config", dump, "print the effective config and exit");

  auto* gen = app.add_subcommand("gen", "audio file to segments and frames");
  std::string audio, out_dir = "out";
  std::uint64_t seed = 0;
  gen->add_option("audio", audio, "WAV file")->required()->check(CLI::ExistingFile);
  gen->add_option("-o,--out", out_dir, "output directory");
  gen->add_option("--seed", seed, "session seed; 0 derives one");

  auto* edit = app.add_subcommand("edit", "apply a patch to a generated run");
  std::string segments, patch;
  edit->add_option("segments", segments, "segments.json written by gen")->required()->check(CLI::ExistingFile);
  edit->add_option("patch", patch, "patch JSON")->required()->check(CLI::ExistingFile);
  edit->add_option("-o,--out", out_dir, "output directory");

  auto* validate = app.add_subcommand("validate", "validate an IR segment or document");
  std::string ir_file;
  double fps = 25.0;
  validate->add_option("file", ir_file)->required()->check(CLI::ExistingFile);
  validate->add_option("--fps", fps, "frame rate for duration checks");

  auto* bench = app.add_subcommand("bench", "per-edit resample cost table");
  std::vector<long> lengths{500, 1000, 2000, 4000}, deltas{25, 50, 100, 200};
  int trials = 20;
  bench->add_option("--lengths", lengths, "sequence lengths T");
  bench->add_option("--deltas", deltas, "window sizes");
  bench->add_option("--trials", trials, "edits per cell")->check(CLI::PositiveNumber);

  auto* fixtures = app.add_subcommand("fixtures", "write a synthetic labeled audio corpus");
  int count = 8, words = 4;
  std::uint64_t fseed = 1;
  fixtures->add_option("-o,--out", out_dir, "output directory");
  fixtures->add_option("-n,--count", count, "number of clips")->check(CLI::PositiveNumber);
  fixtures->add_option("--words", words, "glosses per clip")->check(CLI::PositiveNumber);
  fixtures->add_option("--seed", fseed, "corpus seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) return cmd_serve(config, host, port, dump);
    if (*gen) return cmd_gen(config, audio, out_dir, seed);
    if (*edit) return cmd_edit(segments, patch, out_dir);
    if (*validate) return cmd_validate(ir_file, fps);
    if (*bench) return cmd_bench(config, lengths, deltas, trials);
    if (*fixtures) return cmd_fixtures(config, out_dir, count, words, fseed);
  } catch (const ir::ValidationError& e) {
    std::cerr << "invalid: " << e.what() << " (" << e.code() << ")\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
