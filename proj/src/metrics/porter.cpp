#include <string>

#include "rsic/metrics/metrics.hpp"

// Porter (1980) suffix stripper, following the reference C implementation
// including its two published departures (bli -> ble, logi -> log).
namespace rsic::metrics {

namespace {

class Stemmer {
  public:
    explicit Stemmer(std::string word) : b_(std::move(word)), k_(static_cast<int>(b_.size()) - 1) {}

    std::string run() {
        if (k_ <= 1) return b_;
        step1ab();
        if (k_ > 0) {
            step1c();
            step2();
            step3();
            step4();
            step5();
        }
        return b_.substr(0, static_cast<std::size_t>(k_ + 1));
    }

  private:
    bool cons(int i) const {
        switch (b_[i]) {
            case 'a':
            case 'e':
            case 'i':
            case 'o':
            case 'u':
                return false;
            case 'y':
                return i == 0 ? true : !cons(i - 1);
            default:
                return true;
        }
    }

    // Number of VC sequences in b[0..j].
    int m() const {
        int n = 0;
        int i = 0;
        while (true) {
            if (i > j_) return n;
            if (!cons(i)) break;
            ++i;
        }
        ++i;
        while (true) {
            while (true) {
                if (i > j_) return n;
                if (cons(i)) break;
                ++i;
            }
            ++i;
            ++n;
            while (true) {
                if (i > j_) return n;
                if (!cons(i)) break;
                ++i;
            }
            ++i;
        }
    }

    bool vowel_in_stem() const {
        for (int i = 0; i <= j_; ++i)
            if (!cons(i)) return true;
        return false;
    }

    bool doublec(int j) const { return j >= 1 && b_[j] == b_[j - 1] && cons(j); }

    bool cvc(int i) const {
        if (i < 2 || !cons(i) || cons(i - 1) || !cons(i - 2)) return false;
        const char ch = b_[i];
        return ch != 'w' && ch != 'x' && ch != 'y';
    }

    bool ends(const std::string& s) {
        const int l = static_cast<int>(s.size());
        if (s[l - 1] != b_[k_]) return false;
        if (l > k_ + 1) return false;
        if (b_.compare(static_cast<std::size_t>(k_ - l + 1), static_cast<std::size_t>(l), s) != 0) return false;
        j_ = k_ - l;
        return true;
    }

    void setto(const std::string& s) {
        b_.replace(static_cast<std::size_t>(j_ + 1), static_cast<std::size_t>(k_ - j_), s);
        k_ = j_ + static_cast<int>(s.size());
        b_.resize(static_cast<std::size_t>(k_ + 1));
    }

    void r(const std::string& s) {
        if (m() > 0) setto(s);
    }

    void step1ab() {
        if (b_[k_] == 's') {
            if (ends("sses")) {
                k_ -= 2;
            } else if (ends("ies")) {
                setto("i");
            } else if (b_[k_ - 1] != 's') {
                --k_;
            }
        }
        if (ends("eed")) {
            if (m() > 0) --k_;
        } else if ((ends("ed") || ends("ing")) && vowel_in_stem()) {
            k_ = j_;
            if (ends("at")) {
                setto("ate");
            } else if (ends("bl")) {
                setto("ble");
            } else if (ends("iz")) {
                setto("ize");
            } else if (doublec(k_)) {
                --k_;
                const char ch = b_[k_];
                if (ch == 'l' || ch == 's' || ch == 'z') ++k_;
            } else if (m() == 1 && cvc(k_)) {
                setto("e");
            }
        }
        b_.resize(static_cast<std::size_t>(k_ + 1));
    }

    void step1c() {
        if (ends("y") && vowel_in_stem()) b_[k_] = 'i';
    }

    // Each case tries its suffixes in order and stops at the first that matches.
    bool try_rules(std::initializer_list<std::pair<const char*, const char*>> rules) {
        for (const auto& [suffix, repl] : rules) {
            if (ends(suffix)) {
                r(repl);
                return true;
            }
        }
        return false;
    }

    void step2() {
        switch (b_[k_ - 1]) {
            case 'a':
                try_rules({{"ational", "ate"}, {"tional", "tion"}});
                break;
            case 'c':
                try_rules({{"enci", "ence"}, {"anci", "ance"}});
                break;
            case 'e':
                try_rules({{"izer", "ize"}});
                break;
            case 'l':
                try_rules({{"bli", "ble"}, {"alli", "al"}, {"entli", "ent"}, {"eli", "e"}, {"ousli", "ous"}});
                break;
            case 'o':
                try_rules({{"ization", "ize"}, {"ation", "ate"}, {"ator", "ate"}});
                break;
            case 's':
                try_rules({{"alism", "al"}, {"iveness", "ive"}, {"fulness", "ful"}, {"ousness", "ous"}});
                break;
            case 't':
                try_rules({{"aliti", "al"}, {"iviti", "ive"}, {"biliti", "ble"}});
                break;
            case 'g':
                try_rules({{"logi", "log"}});
                break;
            default:
                break;
        }
    }

    void step3() {
        switch (b_[k_]) {
            case 'e':
                try_rules({{"icate", "ic"}, {"ative", ""}, {"alize", "al"}});
                break;
            case 'i':
                try_rules({{"iciti", "ic"}});
                break;
            case 'l':
                try_rules({{"ical", "ic"}, {"ful", ""}});
                break;
            case 's':
                try_rules({{"ness", ""}});
                break;
            default:
                break;
        }
    }

    bool ends_any(std::initializer_list<const char*> suffixes) {
        for (const char* s : suffixes)
            if (ends(s)) return true;
        return false;
    }

    void step4() {
        if (k_ < 1) return;
        bool hit = false;
        switch (b_[k_ - 1]) {
            case 'a':
                hit = ends_any({"al"});
                break;
            case 'c':
                hit = ends_any({"ance", "ence"});
                break;
            case 'e':
                hit = ends_any({"er"});
                break;
            case 'i':
                hit = ends_any({"ic"});
                break;
            case 'l':
                hit = ends_any({"able", "ible"});
                break;
            case 'n':
                hit = ends_any({"ant", "ement", "ment", "ent"});
                break;
            case 'o':
                hit = (ends("ion") && j_ >= 0 && (b_[j_] == 's' || b_[j_] == 't')) || ends("ou");
                break;
            case 's':
                hit = ends_any({"ism"});
                break;
            case 't':
                hit = ends_any({"ate", "iti"});
                break;
            case 'u':
                hit = ends_any({"ous"});
                break;
            case 'v':
                hit = ends_any({"ive"});
                break;
            case 'z':
                hit = ends_any({"ize"});
                break;
            default:
                break;
        }
        if (hit && m() > 1) k_ = j_;
    }

    void step5() {
        j_ = k_;
        if (b_[k_] == 'e') {
            const int a = m();
            if (a > 1 || (a == 1 && !cvc(k_ - 1))) --k_;
        }
        if (b_[k_] == 'l' && doublec(k_) && m() > 1) --k_;
    }

    std::string b_;
    int k_;
    int j_ = 0;
};

}  // namespace

std::string porter_stem(const std::string& word) { return Stemmer(word).run(); }

}  // namespace rsic::metrics
