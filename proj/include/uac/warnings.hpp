#pragma once

#include <cstddef>
#include <map>
#include <string>

namespace uac {

// Named warning counters carried through a run and echoed into the report.
class Warnings {
public:
    void add(const std::string& key, std::size_t n = 1) { counts_[key] += n; }
    std::size_t count(const std::string& key) const
    {
        auto it = counts_.find(key);
        return it == counts_.end() ? 0 : it->second;
    }
    void merge(const Warnings& other)
    {
        for (const auto& [k, n] : other.counts_)
            counts_[k] += n;
    }
    const std::map<std::string, std::size_t>& counts() const { return counts_; }
    bool empty() const { return counts_.empty(); }

    friend bool operator==(const Warnings&, const Warnings&) = default;

private:
    std::map<std::string, std::size_t> counts_;
};

// Adds to w when it is non-null.
inline void warn(Warnings* w, const std::string& key, std::size_t n = 1)
{
    if (w && n)
        w->add(key, n);
}

}  // namespace uac
