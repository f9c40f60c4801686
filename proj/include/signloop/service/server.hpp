#pragma once

// HTTP surface: JSON control endpoints and a chunked length-prefixed stream.

#include "signloop/service/audio.hpp"
#include "signloop/service/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <cstring>
#include <string>

namespace signloop::service {

inline constexpr const char* kStreamContentType = "application/x-signloop-stream";

/// Maps an exception to (status, structured body).
inline std::pair<int, Json> error_response(std::exception_ptr ep) {
  auto body = [](const std::string& code, const std::string& path, const std::string& msg) {
    return Json{{"error", {{"code", code}, {"path", path}, {"message", msg}}}};
  };
  try {
    std::rethrow_exception(ep);
  } catch (const ir::ValidationError& e) {
    return {400, body(e.code(), e.path(), e.what())};
  } catch (const nlohmann::json::exception& e) {
    return {400, body("malformed_json", "", e.what())};
  } catch (const NotFoundError& e) {
    return {404, body("not_found", "", e.what())};
  } catch (const StateError& e) {
    return {409, body("bad_state", "", e.what())};
  } catch (const RangeError& e) {
    return {400, body("out_of_range", "", e.what())};
  } catch (const ConfigError& e) {
    return {400, body("invalid_config", "", e.what())};
  } catch (const std::exception& e) {
    return {500, body("internal", "", e.what())};
  }
}

/// Raw little-endian float32 samples.
inline std::vector<float> decode_f32le(const std::string& bytes) {
  if (bytes.size() % 4 != 0) throw RangeError("float32 audio body length must be a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * i);
    const std::uint32_t u = static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
                            static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
    std::memcpy(&out[i], &u, 4);
  }
  return out;
}

inline std::string encode_f32le(std::span<const float> samples) {
  std::string out(samples.size() * 4, '\0');
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, &samples[i], 4);
    for (int b = 0; b < 4; ++b) out[4 * i + static_cast<std::size_t>(b)] = static_cast<char>(u >> (8 * b));
  }
  return out;
}

class HttpServer {
 public:
  explicit HttpServer(Service& svc, std::size_t threads = 16) : svc_(svc) {
    server_.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    server_.set_payload_max_length(svc.config().max_chunk_samples * 4 + (1u << 16));
    routes();
  }

  /// Binds an ephemeral port when `port` is 0; returns the bound port.
  int bind(const std::string& host, int port) {
    if (port == 0) return server_.bind_to_any_port(host);
    if (!server_.bind_to_port(host, port)) throw StateError("cannot bind " + host + ":" + std::to_string(port));
    return port;
  }

  bool run() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  template <typename F>
  void guarded(httplib::Response& res, F&& f, int ok_status = 200) {
    try {
      Json out = f();
      res.status = ok_status;
      res.set_content(out.dump(), "application/json");
    } catch (...) {
      auto [status, body] = error_response(std::current_exception());
      res.status = status;
      res.set_content(body.dump(), "application/json");
    }
  }

  static Json body_json(const httplib::Request& req, bool allow_empty) {
    if (req.body.empty()) {
      if (allow_empty) return Json::object();
      throw ir::ValidationError("missing_body", "", "request body is required");
    }
    return Json::parse(req.body);
  }

  void routes() {
    server_.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
    server_.Get("/v1/config", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(to_json(svc_.config()).dump(), "application/json");
    });
    server_.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(
          res,
          [&] {
            const std::string id = svc_.create_session(body_json(req, true));
            return svc_.get(id)->describe();
          },
          201);
    });
    server_.Get("/v1/sessions", [this](const httplib::Request&, httplib::Response& res) { guarded(res, [&] { return svc_.list(); }); });
    server_.Get(R"(/v1/sessions/([\w-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return svc_.get(req.matches[1])->describe(); });
    });
    server_.Delete(R"(/v1/sessions/([\w-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        svc_.remove(req.matches[1]);
        return Json{{"id", std::string(req.matches[1])}, {"state", "closed"}};
      });
    });
    server_.Post(R"(/v1/sessions/([\w-]+)/audio)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto s = svc_.get(req.matches[1]);
        const std::string type = req.get_header_value("Content-Type");
        std::vector<float> pcm;
        if (type == "audio/wav" || type == "audio/x-wav") {
          const AudioClip c =
              parse_wav(std::span(reinterpret_cast<const unsigned char*>(req.body.data()), req.body.size()));
          if (c.sample_rate != svc_.config().audio.sample_rate) throw RangeError("wav sample rate differs from the service rate");
          pcm = c.samples;
        } else {
          pcm = decode_f32le(req.body);
        }
        if (pcm.size() > svc_.config().max_chunk_samples) throw RangeError("audio chunk too large");
        return s->push_audio(pcm);
      });
    });
    server_.Post(R"(/v1/sessions/([\w-]+)/end)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return svc_.get(req.matches[1])->end_audio(); });
    });
    server_.Post(R"(/v1/sessions/([\w-]+)/edits)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return svc_.get(req.matches[1])->submit_edit(body_json(req, false)); });
    });
    server_.Post(R"(/v1/sessions/([\w-]+)/ratings)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const hitl::Triplet t = svc_.get(req.matches[1])->submit_rating(body_json(req, false));
        return hitl::to_json(t);
      });
    });
    server_.Get(R"(/v1/sessions/([\w-]+)/segments)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return svc_.get(req.matches[1])->segments_document(); });
    });
    server_.Get(R"(/v1/sessions/([\w-]+)/metrics)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return svc_.get(req.matches[1])->metrics(); });
    });
    server_.Get(R"(/v1/sessions/([\w-]+)/stream)", [this](const httplib::Request& req, httplib::Response& res) {
      std::shared_ptr<Subscriber> sub;
      try {
        long from = 0;
        if (req.has_param("from")) {
          const std::string f = req.get_param_value("from");
          std::size_t used = 0;
          from = std::stol(f, &used);
          if (used != f.size()) throw RangeError("from must be an integer");
        }
        sub = svc_.get(req.matches[1])->subscribe(from);
      } catch (const std::invalid_argument&) {
        auto [status, body] = error_response(std::make_exception_ptr(RangeError("from must be an integer")));
        res.status = status;
        res.set_content(body.dump(), "application/json");
        return;
      } catch (...) {
        auto [status, body] = error_response(std::current_exception());
        res.status = status;
        res.set_content(body.dump(), "application/json");
        return;
      }
      res.set_chunked_content_provider(kStreamContentType, [sub](std::size_t, httplib::DataSink& sink) {
        if (!sink.is_writable()) return false;
        if (auto m = sub->next(std::chrono::milliseconds(200))) {
          const std::string bytes = frame_message(*m);
          return sink.write(bytes.data(), bytes.size());
        }
        if (sub->finished()) sink.done();
        return true;
      });
    });
  }

  Service& svc_;
  httplib::Server server_;
};

}  // namespace signloop::service
