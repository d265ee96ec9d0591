#include "uac/datasets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <string_view>

namespace uac::datasets {

namespace {

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
        s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_commas(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos - start)));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out)
{
    if (s.empty())
        return false;
    if (s.front() == '+')
        s.remove_prefix(1);
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

[[noreturn]] void fail_at(const std::filesystem::path& path, std::size_t line, const std::string& what)
{
    throw DataError(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Corpus load_canonical_csv(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw DataError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(is, line))
        throw DataError(path.string() + ": empty file");
    const auto header = split_commas(trim(line));
    const std::vector<std::string_view> fixed{"subject", "label", "sequence", "timestamp_ms"};
    if (header.size() <= fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin()))
        fail_at(path, 1, "header must be subject,label,sequence,timestamp_ms,ch0,...");
    const std::size_t d = header.size() - fixed.size();
    for (std::size_t c = 0; c < d; ++c)
        if (header[fixed.size() + c] != "ch" + std::to_string(c))
            fail_at(path, 1, "expected column 'ch" + std::to_string(c) + "'");

    std::map<std::pair<std::string, std::string>, RawRecording> groups;
    int max_label = -1;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        const auto text = trim(line);
        if (text.empty())
            continue;
        const auto f = split_commas(text);
        if (f.size() != header.size())
            fail_at(path, lineno, "expected " + std::to_string(header.size()) + " fields, found " +
                                      std::to_string(f.size()));
        int label = 0;
        std::int64_t ts = 0;
        if (f[0].empty() || f[2].empty())
            fail_at(path, lineno, "empty subject or sequence id");
        if (!parse_number(f[1], label) || label < 0)
            fail_at(path, lineno, "label must be a non-negative integer");
        if (!parse_number(f[3], ts))
            fail_at(path, lineno, "timestamp_ms must be an integer");
        auto key = std::make_pair(std::string(f[0]), std::string(f[2]));
        auto [it, inserted] = groups.try_emplace(key);
        RawRecording& rec = it->second;
        if (inserted) {
            rec.subject_id = key.first;
            rec.sequence_id = key.second;
            rec.label = label;
            rec.channels = d;
        }
        else {
            if (rec.label != label)
                fail_at(path, lineno, "label changes within sequence '" + key.second + "'");
            if (ts <= rec.timestamps.back())
                fail_at(path, lineno, "timestamps not strictly increasing within sequence '" + key.second + "'");
        }
        rec.timestamps.push_back(ts);
        for (std::size_t c = 0; c < d; ++c) {
            double v = 0.0;
            if (!parse_number(f[4 + c], v) || !std::isfinite(v))
                fail_at(path, lineno, "channel ch" + std::to_string(c) + " is not a finite number");
            rec.values.push_back(v);
        }
        max_label = std::max(max_label, label);
    }
    if (groups.empty())
        throw DataError(path.string() + ": no data rows");

    Corpus corpus;
    for (auto& [key, rec] : groups)
        corpus.recordings.push_back(std::move(rec));
    for (int c = 0; c <= max_label; ++c)
        corpus.class_names.push_back(std::to_string(c));
    return corpus;
}

void save_canonical_csv(const Corpus& corpus, const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw DataError("cannot open '" + path.string() + "' for writing");
    const std::size_t d = corpus.channel_count();
    os << "subject,label,sequence,timestamp_ms";
    for (std::size_t c = 0; c < d; ++c)
        os << ",ch" << c;
    os << '\n';
    char buf[32];
    for (const auto& rec : corpus.recordings) {
        for (std::size_t t = 0; t < rec.length(); ++t) {
            os << rec.subject_id << ',' << rec.label << ',' << rec.sequence_id << ',' << rec.timestamps[t];
            for (std::size_t c = 0; c < d; ++c) {
                auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), rec.at(t, c));
                os << ',' << std::string_view(buf, static_cast<std::size_t>(end - buf));
            }
            os << '\n';
        }
    }
    if (!os)
        throw DataError("failed writing '" + path.string() + "'");
}

namespace {

struct SensorRows {
    // activity code -> timestamp -> xyz
    std::map<std::string, std::map<std::int64_t, std::array<double, 3>>> by_activity;
    std::string subject;
};

SensorRows read_wisdm_file(const std::filesystem::path& path, Warnings* warnings)
{
    std::ifstream is(path);
    if (!is)
        throw DataError("cannot open '" + path.string() + "'");
    SensorRows rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto text = trim(line);
        if (!text.empty() && text.back() == ';')
            text.remove_suffix(1);
        text = trim(text);
        if (text.empty())
            continue;
        const auto f = split_commas(text);
        if (f.size() != 6)
            fail_at(path, lineno, "expected 6 comma-separated fields (subject,activity,timestamp,x,y,z), found " +
                                      std::to_string(f.size()));
        std::int64_t ts = 0;
        std::array<double, 3> xyz{};
        if (f[0].empty() || f[1].empty())
            fail_at(path, lineno, "empty subject or activity code");
        if (!parse_number(f[2], ts))
            fail_at(path, lineno, "timestamp must be an integer");
        for (int k = 0; k < 3; ++k)
            if (!parse_number(f[3 + k], xyz[k]) || !std::isfinite(xyz[k]))
                fail_at(path, lineno, "sensor value is not a finite number");
        if (rows.subject.empty())
            rows.subject = std::string(f[0]);
        else if (rows.subject != f[0])
            fail_at(path, lineno, "subject id changes within a per-subject file");
        auto& series = rows.by_activity[std::string(f[1])];
        if (!series.emplace(ts, xyz).second)
            warn(warnings, "wisdm_duplicate_timestamp");
    }
    return rows;
}

}  // namespace

Corpus load_wisdm(const std::filesystem::path& dir, Warnings* warnings, const std::string& device)
{
    if (!std::filesystem::is_directory(dir))
        throw DataError("'" + dir.string() + "' is not a directory");
    const std::regex pattern("data_([A-Za-z0-9]+)_(accel|gyro)_" + device + R"(\.txt)");
    std::map<std::string, std::filesystem::path> accel, gyro;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
        if (entry.is_regular_file())
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
        std::smatch m;
        const std::string name = p.filename().string();
        if (!std::regex_match(name, m, pattern))
            continue;
        auto& table = m[2] == "accel" ? accel : gyro;
        if (!table.emplace(m[1], p).second)
            throw DataError("duplicate " + std::string(m[2]) + " file for subject " + std::string(m[1]));
    }
    if (accel.empty() && gyro.empty())
        throw DataError("no WISDM " + device + " files found under '" + dir.string() + "'");
    for (const auto& [s, p] : accel)
        if (!gyro.count(s))
            throw DataError("subject " + s + " has an accelerometer file but no gyroscope file");
    for (const auto& [s, p] : gyro)
        if (!accel.count(s))
            throw DataError("subject " + s + " has a gyroscope file but no accelerometer file");

    std::vector<std::pair<std::string, RawRecording>> recs;  // (activity code, recording)
    std::set<std::string> codes;
    for (const auto& [s, accel_path] : accel) {
        const SensorRows a = read_wisdm_file(accel_path, warnings);
        const SensorRows g = read_wisdm_file(gyro.at(s), warnings);
        const std::string subject = a.subject.empty() ? s : a.subject;
        std::size_t joined_rows = 0;
        std::set<std::string> activities;
        for (const auto& [act, _] : a.by_activity)
            activities.insert(act);
        for (const auto& [act, _] : g.by_activity)
            activities.insert(act);
        for (const auto& act : activities) {
            auto ai = a.by_activity.find(act);
            auto gi = g.by_activity.find(act);
            const std::size_t a_rows = ai == a.by_activity.end() ? 0 : ai->second.size();
            const std::size_t g_rows = gi == g.by_activity.end() ? 0 : gi->second.size();
            RawRecording rec;
            rec.subject_id = subject;
            rec.sequence_id = subject + "-" + act;
            rec.channels = 6;
            if (a_rows && g_rows) {
                for (const auto& [ts, xyz] : ai->second) {
                    auto hit = gi->second.find(ts);
                    if (hit == gi->second.end())
                        continue;
                    rec.timestamps.push_back(ts);
                    rec.values.insert(rec.values.end(), xyz.begin(), xyz.end());
                    rec.values.insert(rec.values.end(), hit->second.begin(), hit->second.end());
                }
            }
            const std::size_t matched = rec.length();
            warn(warnings, "wisdm_unmatched_timestamp", (a_rows - matched) + (g_rows - matched));
            if (matched == 0)
                continue;
            joined_rows += matched;
            codes.insert(act);
            recs.emplace_back(act, std::move(rec));
        }
        if (joined_rows == 0)
            throw DataError("subject " + subject + ": accelerometer and gyroscope share no timestamps");
    }

    Corpus corpus;
    corpus.class_names.assign(codes.begin(), codes.end());
    for (auto& [act, rec] : recs) {
        rec.label = static_cast<int>(std::lower_bound(corpus.class_names.begin(), corpus.class_names.end(), act) -
                                     corpus.class_names.begin());
        corpus.recordings.push_back(std::move(rec));
    }
    std::sort(corpus.recordings.begin(), corpus.recordings.end(), [](const RawRecording& x, const RawRecording& y) {
        return std::tie(x.subject_id, x.sequence_id) < std::tie(y.subject_id, y.sequence_id);
    });
    return corpus;
}

}  // namespace uac::datasets
