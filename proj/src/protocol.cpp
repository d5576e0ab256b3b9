#include "teleop/protocol.hpp"

#include <stdexcept>

namespace teleop::protocol {

using nlohmann::json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr std::pair<NudgeAxis, std::string_view> kAxisNames[] = {
    {NudgeAxis::X, "x"},       {NudgeAxis::Y, "y"},         {NudgeAxis::Z, "z"},
    {NudgeAxis::Roll, "roll"}, {NudgeAxis::Pitch, "pitch"}, {NudgeAxis::Yaw, "yaw"},
};

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorCode::MalformedMessage, what); }

json areas_json(const std::vector<plan::SelectionArea>& areas) {
  json a = json::array();
  for (const auto& s : areas) a.push_back(plan::to_json(s));
  return a;
}

json opt(const std::optional<std::uint64_t>& v) { return v ? json(*v) : json(); }

std::optional<std::uint64_t> opt_u64(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<std::uint64_t>();
}

void check_version(const json& j) {
  if (!j.is_object()) malformed("message is not an object");
  if (j.value("v", 0) != kSchemaVersion) malformed("unsupported schema version");
}

CommandBody body_from_json(const json& b) {
  const std::string type = b.at("type").get<std::string>();
  if (type == "cartesian_goto") return CartesianGoto{perception::pose_from_json(b.at("pose"))};
  if (type == "camera_nudge") {
    int sign = b.at("sign").get<int>();
    if (sign != 1 && sign != -1) malformed("nudge sign must be +1 or -1");
    return CameraNudge{axis_from_string(b.at("axis").get<std::string>()), sign};
  }
  if (type == "grasp") return GraspCmd{};
  if (type == "release") return ReleaseCmd{};
  if (type == "reset") return ResetCmd{};
  if (type == "single_action") return SingleAction{plan::selection_from_json(b.at("area")), opt_u64(b, "frame")};
  if (type == "submit_plan") {
    SubmitPlan s;
    for (const auto& a : b.at("areas")) s.areas.push_back(plan::selection_from_json(a));
    s.frame = opt_u64(b, "frame");
    return s;
  }
  if (type == "cancel") return CancelCmd{opt_u64(b, "plan")};
  if (type == "resume") return ResumeCmd{};
  malformed("unknown command type '" + type + "'");
}

json body_json(const CommandBody& body) {
  json b = std::visit(
      overloaded{
          [](const CartesianGoto& c) { return json{{"pose", perception::pose_to_json(c.pose)}}; },
          [](const CameraNudge& c) { return json{{"axis", std::string(to_string(c.axis))}, {"sign", c.sign}}; },
          [](const SingleAction& c) {
            json j{{"area", plan::to_json(c.area)}};
            if (c.frame) j["frame"] = *c.frame;
            return j;
          },
          [](const SubmitPlan& c) {
            json j{{"areas", areas_json(c.areas)}};
            if (c.frame) j["frame"] = *c.frame;
            return j;
          },
          [](const CancelCmd& c) {
            json j = json::object();
            if (c.plan) j["plan"] = *c.plan;
            return j;
          },
          [](const auto&) { return json::object(); },
      },
      body);
  b["type"] = std::string(body_type(body));
  return b;
}

ItemStatus item_status_from(std::string_view s) {
  for (auto st : {ItemStatus::Done, ItemStatus::Active, ItemStatus::Pending})
    if (to_string(st) == s) return st;
  malformed("unknown plan item status '" + std::string(s) + "'");
}

}  // namespace

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::Cc: return "cc";
    case Mode::Pc: return "pc";
    case Mode::Tla: return "tla";
  }
  return "?";
}

Mode mode_from_string(std::string_view s) {
  for (auto m : {Mode::Cc, Mode::Pc, Mode::Tla})
    if (to_string(m) == s) return m;
  malformed("unknown mode '" + std::string(s) + "'");
}

std::string_view to_string(NudgeAxis a) {
  for (const auto& [axis, name] : kAxisNames)
    if (axis == a) return name;
  return "?";
}

NudgeAxis axis_from_string(std::string_view s) {
  for (const auto& [axis, name] : kAxisNames)
    if (name == s) return axis;
  malformed("unknown nudge axis '" + std::string(s) + "'");
}

std::string_view body_type(const CommandBody& b) {
  return std::visit(overloaded{
                        [](const CartesianGoto&) { return std::string_view("cartesian_goto"); },
                        [](const CameraNudge&) { return std::string_view("camera_nudge"); },
                        [](const GraspCmd&) { return std::string_view("grasp"); },
                        [](const ReleaseCmd&) { return std::string_view("release"); },
                        [](const ResetCmd&) { return std::string_view("reset"); },
                        [](const SingleAction&) { return std::string_view("single_action"); },
                        [](const SubmitPlan&) { return std::string_view("submit_plan"); },
                        [](const CancelCmd&) { return std::string_view("cancel"); },
                        [](const ResumeCmd&) { return std::string_view("resume"); },
                    },
                    b);
}

bool allowed_in(Mode mode, const CommandBody& b) {
  if (std::holds_alternative<CartesianGoto>(b)) return mode == Mode::Cc;
  if (std::holds_alternative<SingleAction>(b)) return mode == Mode::Pc;
  if (std::holds_alternative<SubmitPlan>(b)) return mode == Mode::Tla;
  return true;
}

json to_json(const CommandMsg& c) {
  return {{"v", kSchemaVersion}, {"seq", c.seq}, {"mode", std::string(to_string(c.mode))}, {"body", body_json(c.body)}};
}

CommandMsg command_from_json(const json& j) {
  check_version(j);
  try {
    CommandMsg c;
    c.seq = j.at("seq").get<std::uint64_t>();
    c.mode = mode_from_string(j.at("mode").get<std::string>());
    c.body = body_from_json(j.at("body"));
    return c;
  } catch (const json::exception& e) {
    malformed(std::string("bad command: ") + e.what());
  }
}

Pose6D nudged(const Pose6D& from, const CameraNudge& n) {
  Pose6D p = from;
  const double d = kNudgeStep * n.sign;
  const double a = kNudgeAngle * n.sign;
  switch (n.axis) {
    case NudgeAxis::X: p.position.x() += d; break;
    case NudgeAxis::Y: p.position.y() += d; break;
    case NudgeAxis::Z: p.position.z() += d; break;
    case NudgeAxis::Roll: p.roll = normalize_angle(p.roll + a); break;
    case NudgeAxis::Pitch: p.pitch += a; break;
    case NudgeAxis::Yaw: p.yaw = normalize_angle(p.yaw + a); break;
  }
  return p;
}

std::string_view to_string(ItemStatus s) {
  switch (s) {
    case ItemStatus::Done: return "done";
    case ItemStatus::Active: return "active";
    case ItemStatus::Pending: return "pending";
  }
  return "?";
}

json to_json(const StateMsg& s) {
  json view = json::array();
  for (const auto& it : s.game_plan_view)
    view.push_back({{"label", it.label}, {"status", std::string(to_string(it.status))}});
  return {{"v", kSchemaVersion},
          {"type", "state"},
          {"sim_time", s.sim_time},
          {"frame", perception::to_json(s.frame)},
          {"executor", executor::to_json(s.executor)},
          {"plan", opt(s.plan)},
          {"game_plan_view", view},
          {"ack", s.ack}};
}

json to_json(const Reply& r) {
  json j{{"v", kSchemaVersion}, {"type", "reply"}, {"seq", opt(r.seq)}, {"ok", r.ok()}};
  if (r.error) {
    j["code"] = std::string(to_string(*r.error));
    j["message"] = r.message;
  }
  if (r.plan) {
    j["plan"] = *r.plan;
    j["primitives"] = r.primitives;
    j["actions"] = r.actions;
  }
  return j;
}

json to_json(const ServerMsg& m) {
  return std::visit(overloaded{
                        [](const Reply& r) { return to_json(r); },
                        [](const StateMsg& s) { return to_json(s); },
                        [](const executor::ExecutionEvent& e) {
                          return json{{"v", kSchemaVersion}, {"type", "event"}, {"event", executor::to_json(e)}};
                        },
                    },
                    m);
}

ServerMsg server_msg_from_json(const json& j) {
  check_version(j);
  try {
    const std::string type = j.at("type").get<std::string>();
    if (type == "reply") {
      Reply r;
      r.seq = opt_u64(j, "seq");
      if (!j.at("ok").get<bool>()) {
        auto code = error_from_string(j.at("code").get<std::string>());
        if (!code) malformed("unknown error code");
        r.error = code;
        r.message = j.value("message", "");
      }
      r.plan = opt_u64(j, "plan");
      if (r.plan) {
        r.primitives = j.at("primitives").get<std::size_t>();
        r.actions = j.at("actions").get<std::vector<std::string>>();
      }
      return r;
    }
    if (type == "state") {
      StateMsg s;
      s.sim_time = j.at("sim_time").get<double>();
      s.frame = perception::frame_from_json(j.at("frame"));
      s.executor = executor::status_from_json(j.at("executor"));
      s.plan = opt_u64(j, "plan");
      for (const auto& it : j.at("game_plan_view"))
        s.game_plan_view.push_back({it.at("label").get<std::string>(),
                                    item_status_from(it.at("status").get<std::string>())});
      s.ack = j.at("ack").get<std::uint64_t>();
      return s;
    }
    if (type == "event") {
      try {
        return executor::event_from_json(j.at("event"));
      } catch (const Error& e) {
        malformed(e.what());
      }
    }
    malformed("unknown message type '" + type + "'");
  } catch (const json::exception& e) {
    malformed(std::string("bad server message: ") + e.what());
  }
}

// Session

Session::Session(executor::Executor& ex, SessionConfig cfg)
    : ex_(ex), cfg_(cfg), camera_(perception::CameraModel::from(ex.workspace().camera)) {}

Reply Session::handle_json(const json& j) {
  CommandMsg msg;
  try {
    msg = command_from_json(j);
  } catch (const Error& e) {
    Reply r;
    if (j.is_object() && j.contains("seq") && j["seq"].is_number_integer() && j["seq"].get<std::int64_t>() >= 0)
      r.seq = j["seq"].get<std::uint64_t>();
    r.error = e.code();
    r.message = e.what();
    return r;
  }
  return handle(msg);
}

Reply Session::handle(const CommandMsg& msg) {
  Reply r;
  r.seq = msg.seq;
  auto fail = [&r](ErrorCode code, std::string what) {
    r.error = code;
    r.message = std::move(what);
    return r;
  };
  if (any_seq_ && msg.seq <= ack_)
    return fail(ErrorCode::StaleSeq, "seq " + std::to_string(msg.seq) + " <= " + std::to_string(ack_));
  ack_ = msg.seq;
  any_seq_ = true;

  if (!mode_) mode_ = msg.mode;
  if (msg.mode != *mode_)
    return fail(ErrorCode::ModeViolation, "session is in " + std::string(to_string(*mode_)) + " mode");
  if (!allowed_in(*mode_, msg.body))
    return fail(ErrorCode::ModeViolation,
                std::string(body_type(msg.body)) + " is not available in " + std::string(to_string(*mode_)) + " mode");
  try {
    Reply applied = apply(msg.body);
    applied.seq = msg.seq;
    return applied;
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  }
}

Pose6D Session::pose_base() const {
  if (pending_pose_) {
    auto it = plans_.find(pending_pose_->first);
    if (it != plans_.end() && !it->second.finished && !it->second.cancelled) return pending_pose_->second;
  }
  return ex_.state().ee_pose;
}

Reply Session::apply(const CommandBody& body) {
  using plan::PrimitiveProgram;
  auto single = [](plan::Primitive p, std::string label) {
    PrimitiveProgram prog;
    prog.primitives.push_back(p);
    prog.action_index.push_back(0);
    prog.action_labels.push_back(std::move(label));
    return prog;
  };
  auto pose_command = [&](const Pose6D& target, std::string label) {
    Reply r = enqueue(single(plan::move_to(target), std::move(label)), false);
    pending_pose_ = std::make_pair(*r.plan, target);
    return r;
  };

  return std::visit(
      overloaded{
          [&](const CartesianGoto& c) { return pose_command(c.pose, "goto"); },
          [&](const CameraNudge& c) {
            return pose_command(nudged(pose_base(), c),
                                "nudge " + std::string(c.sign > 0 ? "+" : "-") + std::string(to_string(c.axis)));
          },
          [&](const GraspCmd&) { return enqueue(single(plan::grasp(), "grasp"), false); },
          [&](const ReleaseCmd&) { return enqueue(single(plan::release(), "release"), false); },
          [&](const ResetCmd&) { return pose_command(ex_.workspace().home, "reset"); },
          [&](const SingleAction& c) {
            if (c.area.checklist.size() != 1)
              throw Error(ErrorCode::InvalidSelection, "single_action takes exactly one checklist item");
            return author_and_enqueue({c.area}, c.frame);
          },
          [&](const SubmitPlan& c) {
            if (c.areas.empty()) throw Error(ErrorCode::EmptyChecklist, "plan has no selection areas");
            return author_and_enqueue(c.areas, c.frame);
          },
          [&](const CancelCmd& c) {
            auto id = c.plan ? c.plan : ex_.status().current_plan;
            if (!id) throw Error(ErrorCode::NoSuchPlan, "nothing to cancel");
            ex_.cancel(*id);
            if (auto it = plans_.find(*id); it != plans_.end()) it->second.cancelled = true;
            Reply r;
            r.message = "cancelled";
            return r;
          },
          [&](const ResumeCmd&) {
            ex_.resume();
            Reply r;
            r.message = "resumed";
            return r;
          },
      },
      body);
}

Reply Session::author_and_enqueue(const std::vector<plan::SelectionArea>& areas,
                                  std::optional<std::uint64_t> frame) {
  const auto& f = refresh_frame();
  if (frame && *frame != f.frame_id)
    throw Error(ErrorCode::StaleFrame,
                "authored on frame " + std::to_string(*frame) + ", latest is " + std::to_string(f.frame_id));
  plan::GamePlan gp = plan::author(areas, f, f.frame_id, ex_.state(), ex_.workspace(), camera_);
  return enqueue(plan::compile(gp), true);
}

Reply Session::enqueue(plan::PrimitiveProgram program, bool authored) {
  PlanRecord rec;
  rec.labels = program.action_labels;
  rec.action_index = program.action_index;
  Reply r;
  r.primitives = program.size();
  r.actions = program.action_labels;
  rec.id = ex_.enqueue(std::move(program));
  r.plan = rec.id;
  plans_[rec.id] = std::move(rec);
  if (authored) shown_ = r.plan;
  return r;
}

void Session::observe(const std::vector<executor::ExecutionEvent>& events) {
  using executor::EventKind;
  for (const auto& e : events) {
    if (!e.plan_id) continue;
    auto it = plans_.find(*e.plan_id);
    if (it == plans_.end()) continue;
    PlanRecord& rec = it->second;
    switch (e.kind) {
      case EventKind::PlanFinished: rec.finished = true; break;
      case EventKind::Cancelled: rec.cancelled = true; break;
      case EventKind::PrimitiveStarted:
        if (e.primitive && *e.primitive < rec.action_index.size()) rec.active = rec.action_index[*e.primitive];
        break;
      default: break;
    }
  }
}

std::vector<PlanViewItem> Session::game_plan_view() const {
  std::vector<PlanViewItem> view;
  if (!shown_) return view;
  const PlanRecord& rec = plans_.at(*shown_);
  const auto status = ex_.status();

  std::optional<std::size_t> active;
  std::size_t done = 0;
  if (rec.finished) {
    done = rec.labels.size();
  } else if (status.current_plan == rec.id && status.current_primitive &&
             *status.current_primitive < rec.action_index.size()) {
    active = rec.action_index[*status.current_primitive];
    done = *active;
  } else if (rec.cancelled && rec.active) {
    done = *rec.active;
  }
  for (std::size_t i = 0; i < rec.labels.size(); ++i) {
    ItemStatus st = i < done ? ItemStatus::Done : (active && i == *active ? ItemStatus::Active : ItemStatus::Pending);
    view.push_back({rec.labels[i], st});
  }
  return view;
}

const perception::FrameDescription& Session::refresh_frame() {
  // Noise is keyed on the scene, not the frame id, so an unchanged scene describes identically.
  auto f = perception::describe_frame(ex_.state(), ex_.workspace(), camera_, 0, cfg_.noise_sigma, cfg_.seed);
  std::string key = perception::to_json(f).dump();
  if (key != frame_key_) {
    frame_ = std::move(f);
    frame_.frame_id = next_frame_id_++;
    frame_key_ = std::move(key);
  }
  return frame_;
}

StateMsg Session::state() {
  StateMsg s;
  s.sim_time = ex_.sim_time();
  s.frame = refresh_frame();
  s.executor = ex_.status();
  s.plan = shown_;
  s.game_plan_view = game_plan_view();
  s.ack = ack_;
  return s;
}

// Link

void LinkConfig::validate() const {
  if (!(one_way_delay_ms >= 0.0)) throw std::invalid_argument("one_way_delay must be >= 0");
  if (!(jitter_ms >= 0.0) || jitter_ms > one_way_delay_ms)
    throw std::invalid_argument("jitter must be in [0, one_way_delay]");
  if (!(state_rate > 0.0)) throw std::invalid_argument("state_rate must be > 0");
}

// Framing

std::string encode_frame(std::string_view payload) {
  if (payload.size() > kMaxFrame) malformed("frame too large");
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(payload.size() + 4);
  out.push_back(static_cast<char>((n >> 24) & 0xFF));
  out.push_back(static_cast<char>((n >> 16) & 0xFF));
  out.push_back(static_cast<char>((n >> 8) & 0xFF));
  out.push_back(static_cast<char>(n & 0xFF));
  out.append(payload);
  return out;
}

void FrameDecoder::feed(std::string_view bytes) { buf_.append(bytes); }

std::optional<std::string> FrameDecoder::next() {
  if (buf_.size() < 4) return std::nullopt;
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n = (n << 8) | static_cast<unsigned char>(buf_[static_cast<std::size_t>(i)]);
  if (n > kMaxFrame) malformed("frame length " + std::to_string(n) + " exceeds limit");
  if (buf_.size() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
  std::string payload = buf_.substr(4, n);
  buf_.erase(0, 4 + static_cast<std::size_t>(n));
  return payload;
}

// Session log

json log_record(double wall_time, double sim_time, const executor::ExecutionEvent& e) {
  return {{"wall_time", wall_time}, {"sim_time", sim_time}, {"event", executor::to_json(e)}};
}

json log_record(double wall_time, double sim_time, const CommandMsg& c, const Reply& r) {
  json rep = to_json(r);
  rep.erase("v");
  rep.erase("type");
  return {{"wall_time", wall_time}, {"sim_time", sim_time}, {"command", to_json(c)}, {"reply", rep}};
}

}  // namespace teleop::protocol
